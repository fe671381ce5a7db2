"""Dense float64 tensor helpers and a portable seeded RNG.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float64.
The helpers here add the shape validation and error messages the rest of the
package relies on; hot loops in the layers call numpy directly.

The generator is xoshiro256** seeded through splitmix64, so a given seed
produces the same stream on every platform and in every language that
implements the same two algorithms.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

Tensor = np.ndarray

_MASK64 = 0xFFFFFFFFFFFFFFFF
_TWO_NEG_53 = 1.0 / (1 << 53)


class ShapeError(ValueError):
    """Raised when tensor shapes or axes are incompatible."""


def tensor(values, shape: Sequence[int] | None = None) -> Tensor:
    """Build a float64 tensor, optionally reshaping a flat row-major list."""
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeError(f"extents must be positive, got {shape}")
        if arr.size != math.prod(shape):
            raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    return np.ascontiguousarray(arr)


def flat_index(coords: Sequence[int], shape: Sequence[int]) -> int:
    """Row-major flat offset of ``coords`` within ``shape``."""
    if len(coords) != len(shape):
        raise ShapeError(f"coordinate rank {len(coords)} != shape rank {len(shape)}")
    idx = 0
    for c, s in zip(coords, shape):
        if not 0 <= c < s:
            raise IndexError(f"coordinate {tuple(coords)} outside shape {tuple(shape)}")
        idx = idx * s + c
    return idx


def unravel(index: int, shape: Sequence[int]) -> tuple[int, ...]:
    """Inverse of :func:`flat_index`."""
    if not 0 <= index < math.prod(shape):
        raise IndexError(f"flat index {index} outside shape {tuple(shape)}")
    coords = []
    for s in reversed(shape):
        index, c = divmod(index, s)
        coords.append(c)
    return tuple(reversed(coords))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def outer(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"outer expects vectors, got {a.shape} and {b.shape}")
    return a[:, None] * b[None, :]


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {kind} shape mismatch: {a.shape} vs {b.shape}")
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    raise ValueError(f"unknown elementwise kind {kind!r}")


def scalar(a: Tensor, s: float, kind: str) -> Tensor:
    if kind == "add":
        return a + s
    if kind == "sub":
        return a - s
    if kind == "mul":
        return a * s
    raise ValueError(f"unknown scalar kind {kind!r}")


def _check_axis(a: Tensor, axis: int) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {a.shape}")
    return axis % a.ndim


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    return np.ascontiguousarray(a.T)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    first = tensors[0]
    axis = _check_axis(first, axis)
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            t.shape[i] != first.shape[i] for i in range(first.ndim) if i != axis
        ):
            raise ShapeError(f"concat along axis {axis}: {first.shape} vs {t.shape}")
    return np.concatenate(tensors, axis=axis)


def reduce(a: Tensor, op: str, axis: int | None = None) -> Tensor:
    if axis is not None:
        axis = _check_axis(a, axis)
    if op == "sum":
        return np.sum(a, axis=axis)
    if op == "mean":
        return np.mean(a, axis=axis)
    if op == "max":
        return np.max(a, axis=axis)
    raise ValueError(f"unknown reduction {op!r}")


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis with max subtraction."""
    if x.ndim == 0:
        raise ShapeError("softmax needs at least one axis")
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Rng:
    """xoshiro256** generator seeded from a 64-bit integer via splitmix64.

    Uniform doubles take the top 53 bits of a draw. Normals use the
    Box-Muller transform, consuming two draws per pair of outputs; an odd
    request discards the second value of the last pair so that no hidden
    state carries over between calls.
    """

    def __init__(self, seed: int):
        sm = int(seed) & _MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        x = (s1 * 5) & _MASK64
        result = ((((x << 7) | (x >> 57)) & _MASK64) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self.s = [s0, s1, s2, s3]
        return result

    def _doubles(self, n: int) -> list[float]:
        # Inlined copy of next_u64; this loop dominates data generation time.
        s0, s1, s2, s3 = self.s
        m = _MASK64
        out = [0.0] * n
        for i in range(n):
            x = (s1 * 5) & m
            r = ((((x << 7) | (x >> 57)) & m) * 9) & m
            t = (s1 << 17) & m
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & m
            out[i] = (r >> 11) * _TWO_NEG_53
        self.s = [s0, s1, s2, s3]
        return out

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * _TWO_NEG_53

    def below(self, n: int) -> int:
        """Integer uniform on ``range(n)`` by rejection, so unbiased."""
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> Tensor:
        if not lo < hi:
            raise ValueError(f"uniform needs lo < hi, got lo={lo}, hi={hi}")
        shape = _as_shape(shape)
        u = np.array(self._doubles(math.prod(shape)), dtype=np.float64)
        return (lo + (hi - lo) * u).reshape(shape)

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> Tensor:
        shape = _as_shape(shape)
        n = math.prod(shape)
        pairs = (n + 1) // 2
        u = np.array(self._doubles(2 * pairs), dtype=np.float64).reshape(pairs, 2)
        # 1 - u keeps the log argument in (0, 1].
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * math.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)
        return (mean + std * z[:n]).reshape(shape)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            order[i], order[j] = order[j], order[i]
        return order

    def spawn(self) -> "Rng":
        """Independent child generator seeded from this stream."""
        return Rng(self.next_u64())


def _as_shape(shape) -> tuple[int, ...]:
    if isinstance(shape, int):
        shape = (shape,)
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ShapeError(f"invalid shape {shape}")
    return shape


def rng_normal(rng: Rng, shape) -> Tensor:
    return rng.normal(shape)


def rng_uniform(rng: Rng, shape, lo: float, hi: float) -> Tensor:
    return rng.uniform(shape, lo, hi)
