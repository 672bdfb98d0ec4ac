"""Decoupled attention model, its single-stream and conventional baselines.

Feature maps are (H, W, D) arrays. The expansive detector produces a
per-class attention map A normalized to unit spatial mass, the
discriminative detector a raw per-pixel class score map S, and the image
score for class c is the A-weighted sum of S over pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dten
from .errors import ContractError, DataError, DimensionError
from .rng import as_generator, generator
from .tensor import (
    Tensor,
    as_tensor,
    attend_pool,
    conv1x1,
    dense,
    dropout,
    mul,
    multilabel_bce,
    softplus_eps,
    spatial_avg_pool,
    spatial_normalize,
    spatial_sum,
)

VARIANTS = ("decoupled", "conventional", "single-stream")


@dataclass
class ModelParams:
    """Detector weights. ``w``/``b`` drive the expansive (attention) head,
    ``v``/``h`` the discriminative head / classifier.

    For the conventional variant the attention head is class-agnostic and
    ``w`` has a single output column.
    """

    w: Tensor
    b: Tensor
    v: Tensor
    h: Tensor
    dropout_rate: float = 0.5
    eps: float = 0.1
    variant: str = "decoupled"
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ("w", "b", "v", "h"):
            t = getattr(self, name)
            if not isinstance(t, Tensor):
                setattr(self, name, Tensor(t, requires_grad=True))
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.w.data.ndim != 2 or self.v.data.ndim != 2:
            raise DimensionError("weights must be (D, C) matrices")
        if self.w.shape[0] != self.v.shape[0]:
            raise DimensionError(f"feature depth mismatch: w {self.w.shape}, v {self.v.shape}")
        heads = 1 if self.variant == "conventional" else self.v.shape[1]
        if self.w.shape[1] != heads or self.b.shape != (heads,) or self.h.shape != (self.v.shape[1],):
            raise DimensionError(
                f"{self.variant} head shapes inconsistent: w {self.w.shape}, b {self.b.shape}, "
                f"v {self.v.shape}, h {self.h.shape}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.eps <= 0:
            raise ContractError(f"eps must be > 0, got {self.eps}")

    @property
    def depth(self) -> int:
        return self.v.shape[0]

    @property
    def n_classes(self) -> int:
        return self.v.shape[1]

    def tensors(self) -> list[Tensor]:
        return [self.w, self.b, self.v, self.h]

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(
            *(Tensor(t.data.copy(), requires_grad=True) for t in self.tensors()),
            dropout_rate=self.dropout_rate,
            eps=self.eps,
            variant=self.variant,
            class_names=list(self.class_names),
        )


def init_params(depth: int, n_classes: int, seed: int = 0, variant: str = "decoupled", **kw) -> ModelParams:
    """Fan-in uniform weights in (-1/sqrt(D), 1/sqrt(D)), zero biases."""
    rng = generator(seed, 0x1A17)
    bound = 1.0 / np.sqrt(depth)
    heads = 1 if variant == "conventional" else n_classes
    w = rng.uniform(-bound, bound, size=(depth, heads))
    v = rng.uniform(-bound, bound, size=(depth, n_classes))
    return ModelParams(w, np.zeros(heads), v, np.zeros(n_classes), variant=variant, **kw)


@dataclass
class ForwardOutputs:
    A: Tensor
    S: Tensor
    attended: Tensor
    p: Tensor
    p_hat: np.ndarray


def softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - np.max(v))
    return e / e.sum()


def _check_input(x: Tensor, params: ModelParams) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"feature map must be (H, W, D), got {x.shape}")
    if x.shape[2] != params.depth:
        raise DimensionError(f"feature depth {x.shape[2]} != model depth {params.depth}")
    return x


def forward_decoupled(x, params: ModelParams, training: bool = False, rng=None) -> ForwardOutputs:
    x = _check_input(x, params)
    rng = as_generator(rng)
    rate = params.dropout_rate
    logits = conv1x1(dropout(x, rate, training, rng), params.w, params.b)
    z = softplus_eps(dropout(logits, rate, training, rng), params.eps)
    A = spatial_normalize(z)
    S = conv1x1(x, params.v, params.h)
    attended = mul(S, A)
    p = spatial_sum(attended)
    return ForwardOutputs(A=A, S=S, attended=attended, p=p, p_hat=softmax(p.data))


def forward_conventional(x, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Class-agnostic attention map (H, W, 1) and class scores (C,)."""
    x = _check_input(x, params)
    if params.w.shape[1] != 1:
        raise DimensionError("conventional attention head must have one output channel")
    a = spatial_normalize(softplus_eps(conv1x1(x, params.w, params.b), params.eps))
    p = dense(attend_pool(x, a), params.v, params.h)
    return a, p


def forward_single_stream(x, params: ModelParams, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    """Discriminative detector alone, average pooled to class scores."""
    x = _check_input(x, params)
    rng = as_generator(rng)
    rate = params.dropout_rate
    S = conv1x1(dropout(x, rate, training, rng), params.v, params.h)
    p = spatial_avg_pool(dropout(S, rate, training, rng))
    return S, p


def scores(x, params: ModelParams, training: bool = False, rng=None) -> Tensor:
    if params.variant == "decoupled":
        return forward_decoupled(x, params, training, rng).p
    if params.variant == "conventional":
        return forward_conventional(x, params)[1]
    return forward_single_stream(x, params, training, rng)[1]


def loss(x, y, params: ModelParams, training: bool = False, rng=None) -> Tensor:
    return multilabel_bce(scores(x, params, training, rng), y)


def class_maps(x, params: ModelParams) -> dict[str, np.ndarray]:
    """Inference-mode (H, W, C) maps used for annotation, keyed by kind.

    Decoupled models give ``expansive`` (A) and ``discriminative`` (S) plus
    the class score softmax ``p_hat`` (shape (C,)). The conventional model
    has no class-specific map of its own, so its per-class map is each
    pixel's contribution to the class score, a_ij * x_ij . v_c.
    """
    x = _check_input(x, params)
    if params.variant == "decoupled":
        out = forward_decoupled(x, params)
        return {"expansive": out.A.data, "discriminative": out.S.data, "p_hat": out.p_hat}
    if params.variant == "conventional":
        a, p = forward_conventional(x, params)
        return {"conventional": a.data * (x.data @ params.v.data), "p_hat": softmax(p.data)}
    S, p = forward_single_stream(x, params)
    return {"single-stream": S.data, "p_hat": softmax(p.data)}


def save_checkpoint(params: ModelParams, directory) -> Path:
    """Write w, b, v, h as DTEN tensors plus ``model.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, t in zip("wbvh", params.tensors()):
        dten.write(directory / f"{name}.dten", t.data)
    dten.write_json(
        directory / "model.json",
        {
            "D": params.depth,
            "C": params.n_classes,
            "eps": params.eps,
            "dropout_rate": params.dropout_rate,
            "variant": params.variant,
            "class_names": list(params.class_names),
        },
    )
    return directory


def load_checkpoint(directory) -> ModelParams:
    directory = Path(directory)
    if not (directory / "model.json").exists():
        raise DataError(f"no checkpoint in {directory}")
    header = dten.read_json(directory / "model.json")
    arrays = [dten.read(directory / f"{name}.dten").astype(np.float64) for name in "wbvh"]
    params = ModelParams(
        *arrays,
        dropout_rate=header["dropout_rate"],
        eps=header["eps"],
        variant=header["variant"],
        class_names=header.get("class_names", []),
    )
    if params.depth != header["D"] or params.n_classes != header["C"]:
        raise DataError("checkpoint header disagrees with tensor shapes")
    return params
