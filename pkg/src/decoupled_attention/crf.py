"""Fully connected CRF refinement by mean-field inference.

Pairwise kernels are computed exactly over all pixel pairs, so cost and
memory grow as N^2 in the pixel count; that is fine up to ~128x128.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .annotate import build_unary, present_classes
from .errors import ContractError, DimensionError

UNARY_FLOOR = 1e-10
# above this many kernel entries the matrix is rebuilt in row blocks every
# iteration instead of being cached
_CACHE_LIMIT = 4096 * 4096
_BLOCK_ROWS = 1024


@dataclass
class CrfConfig:
    n_iters: int = 5
    w_bilateral: float = 10.0
    theta_alpha: float = 8.0
    theta_beta: float = 13.0
    w_smooth: float = 3.0
    theta_gamma: float = 3.0

    def __post_init__(self):
        if self.n_iters < 1:
            raise ContractError("n_iters must be >= 1")
        if self.w_bilateral < 0 or self.w_smooth < 0:
            raise ContractError("kernel weights must be >= 0")
        if min(self.theta_alpha, self.theta_beta, self.theta_gamma) <= 0:
            raise ContractError("kernel widths must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def unary_energy(prob) -> np.ndarray:
    return -np.log(np.maximum(prob, UNARY_FLOOR))


def softmax_rows(neg_energy: np.ndarray) -> np.ndarray:
    e = np.exp(neg_energy - neg_energy.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _pixel_features(image: np.ndarray):
    H, W = image.shape[:2]
    rows, cols = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    pos = np.stack([rows.ravel(), cols.ravel()], axis=1)
    rgb = np.asarray(image, dtype=np.float64).reshape(H * W, -1)
    return pos, rgb


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[0]))
    for d in range(a.shape[1]):
        out += (a[:, d, None] - b[None, :, d]) ** 2
    return out


def _kernel_block(pos, rgb, start: int, stop: int, cfg: CrfConfig) -> np.ndarray:
    d_pos = _sqdist(pos[start:stop], pos)
    k = np.zeros_like(d_pos)
    if cfg.w_bilateral:
        d_rgb = _sqdist(rgb[start:stop], rgb)
        k += cfg.w_bilateral * np.exp(-d_pos / (2 * cfg.theta_alpha**2) - d_rgb / (2 * cfg.theta_beta**2))
    if cfg.w_smooth:
        k += cfg.w_smooth * np.exp(-d_pos / (2 * cfg.theta_gamma**2))
    idx = np.arange(start, stop)
    k[idx - start, idx] = 0.0
    return k


@lru_cache(maxsize=2)
def _position_kernels(H: int, W: int, theta_alpha: float, theta_gamma: float, w_smooth: float):
    """Cached spatial factors: the bilateral position Gaussian and the full
    smoothness kernel, both with a zero diagonal."""
    pos = _pixel_features(np.zeros((H, W, 1)))[0]
    d_pos = _sqdist(pos, pos)
    g_alpha = np.exp(-d_pos / (2 * theta_alpha**2))
    np.fill_diagonal(g_alpha, 0.0)
    smooth = w_smooth * np.exp(-d_pos / (2 * theta_gamma**2))
    np.fill_diagonal(smooth, 0.0)
    g_alpha.flags.writeable = False
    smooth.flags.writeable = False
    return g_alpha, smooth


def _full_kernel(image: np.ndarray, cfg: CrfConfig) -> np.ndarray:
    H, W = image.shape[:2]
    g_alpha, smooth = _position_kernels(H, W, cfg.theta_alpha, cfg.theta_gamma, cfg.w_smooth)
    if not cfg.w_bilateral:
        return smooth.copy()
    rgb = _pixel_features(image)[1]
    # in-place passes: the N x N buffers dominate the cost
    k = np.subtract.outer(rgb[:, 0], rgb[:, 0])
    k *= k
    tmp = np.empty_like(k)
    for c in range(1, rgb.shape[1]):
        np.subtract.outer(rgb[:, c], rgb[:, c], out=tmp)
        tmp *= tmp
        k += tmp
    k *= -1.0 / (2 * cfg.theta_beta**2)
    np.exp(k, out=k)
    k *= g_alpha
    k *= cfg.w_bilateral
    k += smooth
    return k


def mean_field(unary, image, cfg: CrfConfig | None = None, callback=None) -> np.ndarray:
    """Approximate CRF marginals Q of shape (H, W, L).

    ``unary`` holds per-pixel probabilities over the L labels present in
    the image; energies are -log(max(z, 1e-10)). Each iteration sums the
    kernel-weighted marginals of all other pixels, applies the Potts
    penalty (energy for label l is the message mass on labels != l), adds
    the unary and renormalizes with a per-pixel softmax. ``callback(it, Q)``
    sees the state after every iteration.
    """
    cfg = cfg or CrfConfig()
    unary = np.asarray(unary, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if unary.ndim != 3 or image.ndim != 3 or unary.shape[:2] != image.shape[:2]:
        raise DimensionError(f"unary {unary.shape} and image {image.shape} must share (H, W)")
    H, W, L = unary.shape
    if L < 2:
        raise ContractError("mean_field needs at least two labels")
    n = H * W
    u = unary_energy(unary).reshape(n, L)
    Q = softmax_rows(-u)
    pairwise_on = (cfg.w_bilateral > 0 or cfg.w_smooth > 0) and n > 1
    potts = 1.0 - np.eye(L)
    pos, rgb = _pixel_features(image)
    K = _full_kernel(image, cfg) if pairwise_on and n * n <= _CACHE_LIMIT else None

    for it in range(cfg.n_iters):
        if pairwise_on:
            if K is not None:
                msg = K @ Q
            else:
                msg = np.empty_like(Q)
                for s in range(0, n, _BLOCK_ROWS):
                    e = min(s + _BLOCK_ROWS, n)
                    msg[s:e] = _kernel_block(pos, rgb, s, e, cfg) @ Q
            Q = softmax_rows(-u - msg @ potts)
        else:
            Q = softmax_rows(-u)
        if callback is not None:
            callback(it, Q.reshape(H, W, L))
    return Q.reshape(H, W, L)


def restrict(prob_field, present) -> np.ndarray:
    """Keep only the columns of the present classes."""
    return np.asarray(prob_field)[..., list(present)]


def argmax_mask(q, class_index) -> np.ndarray:
    """Per-pixel most probable label mapped to global indices (lowest on ties)."""
    q = np.asarray(q)
    class_index = np.asarray(class_index)
    if class_index.shape != (q.shape[-1],):
        raise DimensionError(f"class index map {class_index.shape} does not fit marginals {q.shape}")
    return class_index[np.argmax(q, axis=-1)].astype(np.uint8)


def refine(mask, labels, image, tau: float, n_classes: int, cfg: CrfConfig | None = None) -> np.ndarray:
    """Pseudo-mask -> unary probabilities -> mean field -> refined mask."""
    present = present_classes(labels)
    prob = build_unary(mask, labels, tau, n_classes)
    q = mean_field(restrict(prob, present), image, cfg)
    return argmax_mask(q, present)
