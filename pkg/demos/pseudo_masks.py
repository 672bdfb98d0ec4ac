"""
From attention to refined pseudo-masks
======================================

Threshold merged attention into a mask with void pixels, then let the dense
CRF fill the gaps using image colour, and score both against ground truth.
"""

from decoupled_attention import metrics
from decoupled_attention.pipeline import ExperimentSpec, annotate_scenes, refine_masks, train_model
from decoupled_attention.synthetic import generate

spec = ExperimentSpec.from_dict({"seed": 2, "dataset": {"count": 200, "height": 32, "width": 32}})
scenes = generate(spec.dataset)
C = spec.dataset.n_classes
params, _ = train_model(scenes, spec, C)

# %%
# Raw masks carry 255 where neither foreground nor background is trusted.
results = annotate_scenes(scenes, params, spec)
raw = [r["masks"]["merged"] for r in results]
void = sum((m == 255).sum() for m in raw) / sum(m.size for m in raw)
print(f"void fraction of raw masks: {void:.3f}")

# %%
# CRF refinement labels every pixel.
refined = refine_masks(scenes, raw, spec, C)
names = spec.dataset.class_names()
for title, masks in (("raw merged", raw), ("refined", refined)):
    report = metrics.evaluate(zip(masks, (s.mask for s in scenes)), C)
    print(metrics.format_table(report, names, title), end="\n\n")
