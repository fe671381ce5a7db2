"""Fusion operators combining a text vector ``t`` and an image vector ``v``."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .ndcore import ShapeError, Tensor


class FusionKind(str, Enum):
    TEXT_ONLY = "text-only"
    IMAGE_ONLY = "image-only"
    CONCAT = "concat"
    DOT_PRODUCT = "dot-product"
    TENSOR_PRODUCT = "tensor-product"

    @classmethod
    def parse(cls, name: "str | FusionKind") -> "FusionKind":
        try:
            return cls(name)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown fusion kind {name!r} (expected one of {names})") from None

    @property
    def uses_text(self) -> bool:
        return self is not FusionKind.IMAGE_ONLY

    @property
    def uses_image(self) -> bool:
        return self is not FusionKind.TEXT_ONLY


ABLATION_ORDER = (
    FusionKind.TEXT_ONLY,
    FusionKind.IMAGE_ONLY,
    FusionKind.CONCAT,
    FusionKind.DOT_PRODUCT,
    FusionKind.TENSOR_PRODUCT,
)


def fused_dim(kind: FusionKind, d: int) -> int:
    kind = FusionKind.parse(kind)
    if kind is FusionKind.CONCAT:
        return 2 * d
    if kind is FusionKind.TENSOR_PRODUCT:
        return (d + 1) ** 2
    return d


class Fusion:
    """Batched fusion of ``(batch, d)`` text and image vectors.

    For tensor-product fusion each vector is augmented with a trailing 1
    before the outer product, so the flattened ``(d+1)**2`` output keeps the
    bimodal products, a copy of ``t`` (last column), a copy of ``v`` (last
    row) and the constant 1 (corner).
    """

    def __init__(self, kind: FusionKind | str):
        self.kind = FusionKind.parse(kind)
        self._cache = None

    def forward(self, t: Tensor | None, v: Tensor | None) -> Tensor:
        kind = self.kind
        if kind is FusionKind.TEXT_ONLY:
            self._cache = (t.shape, None if v is None else v.shape)
            return t
        if kind is FusionKind.IMAGE_ONLY:
            self._cache = (None if t is None else t.shape, v.shape)
            return v
        if t.shape != v.shape:
            raise ShapeError(f"fusion dimension mismatch: t {t.shape} vs v {v.shape}")
        if kind is FusionKind.CONCAT:
            self._cache = t.shape[-1]
            return np.concatenate([t, v], axis=-1)
        if kind is FusionKind.DOT_PRODUCT:
            tn = np.linalg.norm(t, axis=-1, keepdims=True)
            vn = np.linalg.norm(v, axis=-1, keepdims=True)
            if np.any(tn == 0) or np.any(vn == 0):
                raise ValueError("dot-product fusion needs non-zero input vectors")
            tu, vu = t / tn, v / vn
            self._cache = (tu, vu, tn, vn)
            return tu * vu
        ones = np.ones(t.shape[:-1] + (1,))
        ta = np.concatenate([t, ones], axis=-1)
        va = np.concatenate([v, ones], axis=-1)
        self._cache = (ta, va)
        out = ta[..., :, None] * va[..., None, :]
        return out.reshape(t.shape[:-1] + (ta.shape[-1] ** 2,))

    def backward(self, grad_out: Tensor) -> tuple[Tensor | None, Tensor | None]:
        if self._cache is None:
            raise RuntimeError("fusion backward called before forward")
        cache, self._cache = self._cache, None
        kind = self.kind
        if kind is FusionKind.TEXT_ONLY:
            _, vshape = cache
            return grad_out, None if vshape is None else np.zeros(vshape)
        if kind is FusionKind.IMAGE_ONLY:
            tshape, _ = cache
            return None if tshape is None else np.zeros(tshape), grad_out
        if kind is FusionKind.CONCAT:
            d = cache
            return grad_out[..., :d].copy(), grad_out[..., d:].copy()
        if kind is FusionKind.DOT_PRODUCT:
            tu, vu, tn, vn = cache
            gtu = grad_out * vu
            gvu = grad_out * tu
            gt = (gtu - tu * (gtu * tu).sum(axis=-1, keepdims=True)) / tn
            gv = (gvu - vu * (gvu * vu).sum(axis=-1, keepdims=True)) / vn
            return gt, gv
        ta, va = cache
        k = ta.shape[-1]
        g = grad_out.reshape(grad_out.shape[:-1] + (k, k))
        gt = (g @ va[..., :, None])[..., 0]
        gv = (ta[..., None, :] @ g)[..., 0, :]
        return gt[..., :-1], gv[..., :-1]


def fuse(kind: FusionKind | str, t: Tensor, v: Tensor) -> Tensor:
    """Fuse a single pair of vectors."""
    t = np.asarray(t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if t.ndim != 1 or v.ndim != 1:
        raise ShapeError(f"fuse expects vectors, got {t.shape} and {v.shape}")
    if t.shape != v.shape:
        raise ShapeError(f"fusion dimension mismatch: t {t.shape} vs v {v.shape}")
    return Fusion(kind).forward(t[None], v[None])[0]
