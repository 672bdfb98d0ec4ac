"""
Expansive and discriminative attention
======================================

Train the two-stream model on synthetic scenes and look at how the two
attention maps and their merge cover a labelled object.
"""

import numpy as np

from decoupled_attention.annotate import merged_map, minmax_normalize
from decoupled_attention.model import class_maps
from decoupled_attention.pipeline import ExperimentSpec, train_model
from decoupled_attention.synthetic import generate

# %%
# 200 scenes of 32x32 with four labels (background plus three), default
# training schedule. Takes around ten seconds.
spec = ExperimentSpec.from_dict({"seed": 2, "dataset": {"count": 200, "height": 32, "width": 32}})
scenes = generate(spec.dataset)
params, curve = train_model(scenes, spec, spec.dataset.n_classes)
print("loss per epoch", np.round(curve, 3))

# %%
# For one scene, measure how much of each normalized map lands inside the
# object versus how much of the object it reaches.
scene = scenes[0]
maps = class_maps(scene.features, params)
T = merged_map(maps["expansive"], maps["discriminative"], maps["p_hat"])
for c in scene.labels:
    obj = scene.mask == c
    for name, m in (("expansive", maps["expansive"]), ("discriminative", maps["discriminative"]), ("merged", T)):
        active = minmax_normalize(m[..., c - 1]) > 0.2
        inside = (active & obj).sum() / max(active.sum(), 1)
        reach = (active & obj).sum() / obj.sum()
        print(f"class {c} {name:>15}: precision {inside:.2f}, coverage {reach:.2f}")

# %%
# The merge weights each class by the softmax of the image scores.
print("p_hat", np.round(maps["p_hat"], 3), "labels", scene.labels)
