"""Pseudo-mask generation from attention maps.

Labels: 0 is background, 1..C are foreground classes, and ``VOID`` (255)
marks undecided pixels. Class maps are (H, W, C) with channel k holding
foreground label k + 1.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from . import dten
from .errors import ContractError, DataError, DimensionError

VOID = 255
BACKGROUND = 0


def minmax_normalize(m) -> np.ndarray:
    """Rescale a 2-D map to [0, 1]; a constant map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def normalize_channels(maps, method: str = "minmax") -> np.ndarray:
    """Per-channel min-max (default) or spatial-sum normalization of (H, W, C)."""
    maps = np.asarray(maps, dtype=np.float64)
    if method == "minmax":
        return np.stack([minmax_normalize(maps[..., c]) for c in range(maps.shape[2])], axis=2)
    if method == "spatial":
        sums = maps.sum(axis=(0, 1))
        if np.any(sums <= 0):
            raise ContractError("spatial-sum normalization needs positive channel sums")
        return maps / sums
    raise ContractError(f"unknown normalization {method!r}")


def merge_attention(A, S, p_hat) -> np.ndarray:
    """Per-class blend T_c = p_hat_c * A_c + (1 - p_hat_c) * S_c.

    ``A`` and ``S`` are expected to be already normalized per class.
    """
    A = np.asarray(A, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if A.shape != S.shape or A.ndim != 3 or p_hat.shape != (A.shape[2],):
        raise DimensionError(f"merge shapes do not match: A {A.shape}, S {S.shape}, p_hat {p_hat.shape}")
    if np.any(p_hat < 0) or np.any(p_hat > 1):
        raise ContractError("p_hat entries must lie in [0, 1]")
    return p_hat * A + (1.0 - p_hat) * S


def merged_map(expansive, discriminative, p_hat, method: str = "minmax") -> np.ndarray:
    return merge_attention(normalize_channels(expansive, method), normalize_channels(discriminative, method), p_hat)


def background_region(features, thr_bg: float = 0.3) -> np.ndarray:
    """Pixels whose min-max normalized channel sum is below ``thr_bg``."""
    return minmax_normalize(np.asarray(features, dtype=np.float64).sum(axis=2)) < thr_bg


def generate_mask(T, X, labels, thr_fg: float = 0.2, thr_bg: float = 0.3) -> np.ndarray:
    """Threshold a class map into a uint8 mask with background and void.

    Foreground candidates for label c are pixels where the min-max
    normalized T[..., c-1] exceeds ``thr_fg``. Pixels claimed by several
    classes go to the class with the smallest candidate region (lowest label
    on ties). Foreground overrides background; unclaimed pixels are VOID.
    """
    T = np.asarray(T, dtype=np.float64)
    labels = sorted(set(int(c) for c in labels))
    if not labels:
        raise ContractError("image label set is empty")
    if labels[0] < 1 or labels[-1] > T.shape[2]:
        raise ContractError(f"labels {labels} outside 1..{T.shape[2]}")
    if np.shape(X)[:2] != T.shape[:2]:
        raise DimensionError(f"class map {T.shape} and features {np.shape(X)} differ in extent")
    if T.shape[2] >= VOID:
        raise ContractError("too many classes for an 8-bit mask")

    mask = np.full(T.shape[:2], VOID, dtype=np.uint8)
    mask[background_region(X, thr_bg)] = BACKGROUND

    regions = {c: minmax_normalize(T[..., c - 1]) > thr_fg for c in labels}
    # paint largest first so smaller regions (and lower labels on ties) win
    for c in sorted(labels, key=lambda c: (-int(regions[c].sum()), -c)):
        mask[regions[c]] = c
    return mask


def present_classes(labels) -> list[int]:
    """Image label set plus background, sorted."""
    return sorted({BACKGROUND, *(int(c) for c in labels)})


def build_unary(mask, labels, tau: float, n_classes: int) -> np.ndarray:
    """Per-pixel class probabilities (H, W, n_classes) for CRF unaries.

    ``labels`` is the image label set; background is always added.
    ``n_classes`` counts background. Void pixels spread mass uniformly over
    the present classes; labelled pixels put ``tau`` on their label and
    share the rest evenly among the other present classes.
    """
    if not 0.5 < tau < 1.0:
        raise ContractError(f"tau must lie in (0.5, 1), got {tau}")
    mask = np.asarray(mask)
    present = present_classes(labels)
    if present[-1] >= n_classes:
        raise ContractError(f"label {present[-1]} outside {n_classes} classes")
    k = len(present)
    if k < 2:
        raise ContractError("need at least two present classes")
    used = set(np.unique(mask).tolist()) - {VOID}
    if not used <= set(present):
        raise ContractError(f"mask labels {sorted(used - set(present))} not in present set {present}")

    z = np.zeros(mask.shape + (n_classes,), dtype=np.float64)
    void = mask == VOID
    off = (1.0 - tau) / (k - 1)
    for c in present:
        z[..., c] = np.where(void, 1.0 / k, np.where(mask == c, tau, off))
    return z


def write_mask(path, mask, class_names=None) -> Path:
    """8-bit single-channel PNG plus a JSON sidecar naming the indices."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(mask, dtype=np.uint8)).save(path, format="PNG")
    names = {str(VOID): "void"}
    for i, name in enumerate(class_names or []):
        names[str(i)] = name
    dten.write_json(path.with_suffix(".json"), {"classes": names, "height": int(mask.shape[0]), "width": int(mask.shape[1])})
    return path


def read_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DataError(f"{path}: expected 8-bit single-channel mask, got {im.mode}")
            return np.array(im, dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
