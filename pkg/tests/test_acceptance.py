"""Acceptance criteria, one check each.

Every check prints a single ``PASS``/``FAIL`` line (also repeated in the
pytest terminal summary). Run directly with ``python tests/test_acceptance.py``
for the lines alone.
"""
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
import oracles  # noqa: E402
from decoupled_attention import metrics, pipeline  # noqa: E402
from decoupled_attention.annotate import VOID, build_unary, generate_mask, merge_attention  # noqa: E402
from decoupled_attention.cli import main as cli  # noqa: E402
from decoupled_attention.crf import CrfConfig, mean_field  # noqa: E402
from decoupled_attention.model import ModelParams, forward_conventional, forward_decoupled, loss  # noqa: E402
from decoupled_attention.rng import generator  # noqa: E402
from decoupled_attention.synthetic import generate  # noqa: E402
from decoupled_attention.tensor import Tensor, grad_check, softplus_eps, spatial_normalize  # noqa: E402

# mS_IoU of raw merged masks from the first audited seed-7 reference run
PINNED_MERGED_IOU = 0.6153761545372509
PIN_TOLERANCE = 0.02

VERDICTS = []


def verdict(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def params_for(seed, D, C, variant="decoupled"):
    rng = generator(seed, 500)
    heads = 1 if variant == "conventional" else C
    return ModelParams(
        rng.normal(size=(D, heads)),
        rng.normal(size=heads),
        rng.normal(size=(D, C)),
        rng.normal(size=C),
        dropout_rate=0.0,
        variant=variant,
    )


def check_gradients():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        C = 2 + seed % 2
        rng = generator(seed, 501)
        x = rng.normal(size=(4, 4, 3))
        y = rng.integers(0, 2, size=C).astype(float)
        params = params_for(seed, 3, C)
        worst = max(worst, grad_check(lambda: loss(x, y, params), params.tensors(), 1e-5))
    elapsed = time.perf_counter() - start
    return verdict(
        "gradient suite",
        worst < 1e-5 and elapsed < 10.0,
        f"max rel err {worst:.2e} (< 1e-5) over 100 seeds in {elapsed:.2f}s (< 10s)",
    )


def check_normalization():
    worst_a = worst_p = worst_z = 0.0
    leak = 0.0
    for seed in range(1000):
        rng = generator(seed, 502)
        H, W, C = rng.integers(1, 9), rng.integers(1, 9), rng.integers(1, 5)
        z = Tensor(rng.normal(scale=rng.uniform(0.1, 20), size=(H, W, C)))
        A = spatial_normalize(softplus_eps(z, 0.1)).data
        worst_a = max(worst_a, np.abs(A.sum(axis=(0, 1)) - 1).max())
        x = rng.normal(size=(H, W, 3))
        out = forward_decoupled(x, params_for(seed, 3, int(C)))
        worst_p = max(worst_p, abs(out.p_hat.sum() - 1))
        n_classes = 6
        labels = sorted(rng.choice(np.arange(1, n_classes), size=rng.integers(1, 4), replace=False).tolist())
        mask = rng.choice(np.array([0, VOID] + labels, dtype=np.uint8), size=(H, W))
        u = build_unary(mask, labels, rng.uniform(0.51, 0.99), n_classes)
        worst_z = max(worst_z, np.abs(u.sum(axis=2) - 1).max())
        absent = [c for c in range(n_classes) if c not in [0] + labels]
        leak = max(leak, np.abs(u[..., absent]).max(initial=0.0))
    ok = worst_a <= 1e-9 and worst_p <= 1e-9 and worst_z <= 1e-9 and leak == 0.0
    return verdict(
        "normalization suite",
        ok,
        f"1000 inputs; attention sum err {worst_a:.1e}, p_hat sum err {worst_p:.1e}, "
        f"unary sum err {worst_z:.1e}, mass off present classes {leak}",
    )


def check_merge():
    bitwise = True
    convex = True
    for seed in range(200):
        rng = generator(seed, 503)
        A = rng.random((6, 5, 4))
        S = rng.random((6, 5, 4))
        p = rng.integers(0, 2, size=4).astype(float)
        T = merge_attention(A, S, p)
        for c in range(4):
            ref = A[..., c] if p[c] == 1.0 else S[..., c]
            bitwise &= T[..., c].tobytes() == ref.tobytes()
        p = rng.random(4)
        T = merge_attention(A, S, p)
        convex &= bool(np.all(T >= np.minimum(A, S)) and np.all(T <= np.maximum(A, S)))
    return verdict("merge endpoints", bitwise and convex, f"endpoints bitwise {bitwise}, interior convex {convex}")


def check_oracles():
    errs = {}
    rng = generator(504)
    x = rng.normal(size=(6, 5, 3))
    p = params_for(1, 3, 3)
    out = forward_decoupled(x, p)
    A, S, sc = oracles.decoupled_scores(x, p.w.data, p.b.data, p.v.data, p.h.data, 0.1)
    errs["forward_decoupled"] = max(np.abs(out.A.data - A).max(), np.abs(out.S.data - S).max(), np.abs(out.p.data - sc).max())
    pc = params_for(2, 3, 3, "conventional")
    a, sc_c = forward_conventional(x, pc)
    a_ref, sc_ref = oracles.conventional_scores(x, pc.w.data, pc.b.data, pc.v.data, pc.h.data, 0.1)
    errs["forward_conventional"] = max(np.abs(a.data[..., 0] - a_ref).max(), np.abs(sc_c.data - sc_ref).max())
    T = rng.random((8, 8, 3)) ** 2
    X = rng.random((8, 8, 2))
    mismatched = int((generate_mask(T, X, [1, 2, 3]) != oracles.mask_from_rule(T, X, [1, 2, 3], 0.2, 0.3)).sum())
    unary = rng.dirichlet(np.ones(3), size=(8, 8))
    image = rng.uniform(0, 255, size=(8, 8, 3))
    q_ref, _ = oracles.mean_field_loops(unary, image, 5, 10.0, 8.0, 13.0, 3.0, 3.0)
    errs["mean_field"] = np.abs(mean_field(unary, image) - q_ref).max()
    # default weights saturate this instance to one-hot; weak ones keep it soft
    q_ref, _ = oracles.mean_field_loops(unary, image, 5, 1.0, 8.0, 13.0, 0.3, 3.0)
    q = mean_field(unary, image, CrfConfig(w_bilateral=1.0, w_smooth=0.3))
    errs["mean_field (soft)"] = np.abs(q - q_ref).max()
    ok = all(e <= 1e-12 for e in errs.values()) and mismatched == 0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f", generate_mask label mismatches {mismatched}"
    return verdict("oracle equivalence", ok, detail)


def check_crf():
    rng = generator(505)
    unary = rng.dirichlet(np.ones(4), size=(7, 6))
    unary[rng.random(unary.shape) < 0.1] = 0.0
    image = rng.uniform(0, 255, size=(7, 6, 3))
    u = -np.log(np.maximum(unary, 1e-10))
    e = np.exp(-u - (-u).max(axis=2, keepdims=True))
    soft = e / e.sum(axis=2, keepdims=True)
    zero_err = np.abs(mean_field(unary, image, CrfConfig(w_bilateral=0.0, w_smooth=0.0)) - soft).max()
    states = []
    mean_field(unary, image, CrfConfig(n_iters=8), lambda it, Q: states.append(Q))
    valid = all(np.all(Q >= 0) and np.abs(Q.sum(axis=2) - 1).max() < 1e-9 for Q in states) and len(states) == 8
    flip = np.tile([0.8, 0.2], (3, 3, 1))
    flip[1, 1] = [0.2, 0.8]
    fixed = bool(np.all(np.argmax(mean_field(flip, np.full((3, 3, 3), 120.0)), axis=2) == 0))
    return verdict(
        "CRF degeneracy",
        zero_err <= 1e-12 and valid and fixed,
        f"zero-weight err {zero_err:.1e}, marginals valid every iteration {valid}, flipped pixel corrected {fixed}",
    )


def check_metrics():
    bounded = True
    for seed in range(1000):
        rng = generator(seed, 506)
        t = metrics.ConfusionTally(4, *(rng.integers(0, 1000, size=4) for _ in range(3)))
        for v in metrics.score(t, include_background=True)["per_class"].values():
            if v["iou"] is not None:
                bounded &= v["iou"] <= min(x for x in (v["prec"], v["rec"]) if x is not None)
    gt = generator(507).integers(0, 4, size=(16, 16))
    perfect = metrics.evaluate([(gt, gt)], 4, include_background=True)["mean"]
    perfect_ok = all(v == 1.0 for v in perfect.values())
    assoc = True
    for seed in range(200):
        rng = generator(seed, 508)
        a, b, c = (metrics.ConfusionTally(4, *(rng.integers(0, 1000, size=4) for _ in range(3))) for _ in range(3))
        assoc &= (a + b) + c == a + (b + c)
    return verdict(
        "metric identities",
        bounded and perfect_ok and assoc,
        f"IoU <= min(prec, rec) on 1000 tallies {bounded}, perfect mask all 1.0 {perfect_ok}, merge associative {assoc}",
    )


def check_end_to_end():
    spec = pipeline.ExperimentSpec(seed=7)
    scenes = generate(spec.dataset)
    start = time.perf_counter()
    params, curve = pipeline.train_model(scenes, spec, spec.dataset.n_classes)
    train_time = time.perf_counter() - start
    results = pipeline.annotate_scenes(scenes, params, spec)
    kinds = list(results[0]["masks"])
    scored = pipeline.evaluate_kinds(scenes, {k: [r["masks"][k] for r in results] for k in kinds}, spec.dataset.n_classes)
    table = {k: v["mean"] for k, v in scored.items()}
    cells = sum(1 for k in table for m in ("prec", "rec", "iou") if table[k].get(m) is not None)
    start = time.perf_counter()
    sweep = pipeline.run_dropout_sweep(scenes, spec)
    sweep_time = time.perf_counter() - start
    merged = table["merged"]["iou"]
    ok = (
        train_time < 120
        and sweep_time < 600
        and abs(merged - PINNED_MERGED_IOU) <= PIN_TOLERANCE
        and kinds == ["expansive", "discriminative", "merged"]
        and cells == 9
        and len(sweep["rows"]) == 6
    )
    return verdict(
        "end-to-end synthetic regression",
        ok,
        f"training {train_time:.1f}s (< 120s), sweep {sweep_time:.1f}s (< 600s), merged mS_IoU {merged:.4f} "
        f"(pin {PINNED_MERGED_IOU:.4f} +/- {PIN_TOLERANCE}), report {len(kinds)} kinds x 3 metrics = {cells} cells",
    )


DETERMINISM_CONFIG = (
    '{"dataset": {"count": 8, "height": 20, "width": 20}, '
    '"train": {"batch_size": 4, "total_epochs": 3, "decay_epoch": 2}, "crf": {"n_iters": 3}}'
)


def check_determinism():
    def tree(root):
        return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "exp.json"
        cfg.write_text(DETERMINISM_CONFIG)
        base = ["--config", str(cfg), "--seed", "13"]
        outcomes = {}
        for rep in ("a", "b"):
            r = tmp / rep
            data = str(r / "data")
            steps = {
                "gen": ["gen", *base, "--out", data],
                "train": ["train", *base, "--data", data, "--out", str(r / "model")],
                "annotate": ["annotate", *base, "--data", data, "--model", str(r / "model"), "--out", str(r / "ann")],
                "refine": ["refine", *base, "--data", data, "--annotations", str(r / "ann"), "--out", str(r / "ref")],
                "eval": ["eval", *base, "--data", data, "--masks", str(r / "ann"), "--out", str(r / "eval")],
                "sweep": ["sweep", *base, "--rates", "0,0.5", "--out", str(r / "sweep")],
                "ablate": ["ablate", *base, "--out", str(r / "ablate")],
                "run": ["run", *base, "--out", str(r / "run")],
            }
            for name, argv in steps.items():
                if cli(argv) != 0:
                    return verdict("determinism", False, f"'{name}' failed")
            outcomes[rep] = tree(r)
        a, b = outcomes["a"], outcomes["b"]
        differing = sorted(str(k) for k in a if a.get(k) != b.get(k)) + sorted(str(k) for k in b.keys() - a.keys())
    return verdict(
        "determinism",
        not differing and len(a) > 0,
        f"8 verbs run twice with --seed 13: {len(a)} files, {len(differing)} differ",
    )


def test_gradient_suite():
    assert check_gradients()


def test_normalization_suite():
    assert check_normalization()


def test_merge_endpoints():
    assert check_merge()


def test_oracle_equivalence():
    assert check_oracles()


def test_crf_degeneracy():
    assert check_crf()


def test_metric_identities():
    assert check_metrics()


@pytest.mark.slow
def test_end_to_end_synthetic_regression():
    assert check_end_to_end()


def test_determinism():
    assert check_determinism()


if __name__ == "__main__":
    checks = [check_gradients, check_normalization, check_merge, check_oracles, check_crf, check_metrics,
              check_end_to_end, check_determinism]
    sys.exit(0 if all([c() for c in checks]) else 1)
