"""Neural network layers with hand-written backward passes.

Every layer caches what its backward pass needs during ``forward``; calling
``backward`` accumulates parameter gradients into ``grads`` (the caller is
responsible for zeroing) and returns the gradient with respect to the input.
Inputs may carry any number of leading batch/sequence axes.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np
from scipy.special import erf

from .ndcore import Rng, ShapeError, Tensor, softmax

MASKED_SCORE = -1e9
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class BackwardBeforeForward(RuntimeError):
    pass


class Layer:
    """Base class: owns ``params``/``grads`` and optional child layers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, Tensor] = {}
        self.children: dict[str, Layer] = {}
        self._cache = None

    def add_param(self, name: str, value: Tensor) -> Tensor:
        value = np.ascontiguousarray(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor, Tensor]]:
        for name, p in self.params.items():
            yield prefix + name, p, self.grads[name]
        for cname, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def zero_grad(self) -> None:
        for _, _, g in self.named_parameters():
            g.fill(0.0)

    def _take_cache(self):
        if self._cache is None:
            raise BackwardBeforeForward(f"{type(self).__name__}.backward called before forward")
        cache, self._cache = self._cache, None
        return cache


class Linear(Layer):
    def __init__(self, din: int, dout: int, rng: Rng | None = None, std: float = 0.02):
        super().__init__()
        self.din, self.dout = din, dout
        w = rng.normal((din, dout), std=std) if rng is not None else np.zeros((din, dout))
        self.W = self.add_param("W", w)
        self.b = self.add_param("b", np.zeros(dout))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.din:
            raise ShapeError(f"Linear expects last axis {self.din}, got shape {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad_out: Tensor) -> Tensor:
        x = self._take_cache()
        x2 = x.reshape(-1, self.din)
        g2 = grad_out.reshape(-1, self.dout)
        self.grads["W"] += x2.T @ g2
        self.grads["b"] += g2.sum(axis=0)
        return grad_out @ self.params["W"].T


class Embedding(Layer):
    """Lookup table; backward scatters into the table and returns nothing."""

    def __init__(self, rows: int, dim: int, rng: Rng | None = None, std: float = 0.02):
        super().__init__()
        self.rows, self.dim = rows, dim
        e = rng.normal((rows, dim), std=std) if rng is not None else np.zeros((rows, dim))
        self.add_param("E", e)

    def forward(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.rows):
            raise IndexError(f"embedding id out of range [0, {self.rows})")
        self._cache = ids
        return self.params["E"][ids]

    def backward(self, grad_out: Tensor) -> None:
        ids = self._take_cache()
        np.add.at(self.grads["E"], ids.reshape(-1), grad_out.reshape(-1, self.dim))
        return None


class LayerNorm(Layer):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        if not eps > 0:
            raise ValueError("LayerNorm epsilon must be positive")
        self.dim, self.eps = dim, eps
        self.add_param("gamma", np.ones(dim))
        self.add_param("beta", np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"LayerNorm expects last axis {self.dim}, got shape {x.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._cache = (xhat, inv)
        return xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, grad_out: Tensor) -> Tensor:
        xhat, inv = self._take_cache()
        self.grads["gamma"] += (grad_out * xhat).reshape(-1, self.dim).sum(axis=0)
        self.grads["beta"] += grad_out.reshape(-1, self.dim).sum(axis=0)
        gx = grad_out * self.params["gamma"]
        return inv * (
            gx
            - gx.mean(axis=-1, keepdims=True)
            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )


class GELU(Layer):
    """Exact (erf-based) GELU."""

    def forward(self, x: Tensor) -> Tensor:
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        self._cache = (x, cdf)
        return x * cdf

    def backward(self, grad_out: Tensor) -> Tensor:
        x, cdf = self._take_cache()
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return grad_out * (cdf + x * pdf)


class MultiHeadSelfAttention(Layer):
    """Scaled dot-product self-attention over ``(batch, seq, d)`` inputs.

    ``key_mask`` is a boolean ``(batch, seq)`` array, True for keys that may
    be attended to; masked scores are replaced by ``MASKED_SCORE``.
    """

    def __init__(self, d: int, heads: int, rng: Rng | None = None, std: float = 0.02):
        super().__init__()
        if d % heads:
            raise ValueError(f"d_model {d} not divisible by heads {heads}")
        self.d, self.heads, self.dk = d, heads, d // heads
        self.scale = 1.0 / math.sqrt(self.dk)
        self.q = Linear(d, d, rng, std)
        self.k = Linear(d, d, rng, std)
        self.v = Linear(d, d, rng, std)
        self.o = Linear(d, d, rng, std)
        self.children = {"q": self.q, "k": self.k, "v": self.v, "o": self.o}
        self.last_attention: Tensor | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, s, _ = x.shape
        return x.reshape(b, s, self.heads, self.dk).transpose(0, 2, 1, 3)

    def _merge(self, x: Tensor) -> Tensor:
        b, _, s, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, s, self.d)

    def forward(self, x: Tensor, key_mask: Tensor | None = None) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.d:
            raise ShapeError(f"attention expects (batch, seq, {self.d}), got {x.shape}")
        q = self._split(self.q.forward(x))
        k = self._split(self.k.forward(x))
        v = self._split(self.v.forward(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * self.scale
        if key_mask is not None:
            scores = np.where(key_mask[:, None, None, :], scores, MASKED_SCORE)
        attn = softmax(scores)
        self.last_attention = attn
        self._cache = (q, k, v, attn)
        return self.o.forward(self._merge(attn @ v))

    def backward(self, grad_out: Tensor) -> Tensor:
        q, k, v, attn = self._take_cache()
        d_ctx = self._split(self.o.backward(grad_out))
        d_attn = d_ctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ d_ctx
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_scores *= self.scale
        dq = d_scores @ k
        dk = d_scores.transpose(0, 1, 3, 2) @ q
        return (
            self.q.backward(self._merge(dq))
            + self.k.backward(self._merge(dk))
            + self.v.backward(self._merge(dv))
        )


class FeedForward(Layer):
    def __init__(self, d: int, hidden: int, rng: Rng | None = None, std: float = 0.02):
        super().__init__()
        self.fc1 = Linear(d, hidden, rng, std)
        self.act = GELU()
        self.fc2 = Linear(hidden, d, rng, std)
        self.children = {"fc1": self.fc1, "fc2": self.fc2}

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, grad_out: Tensor) -> Tensor:
        return self.fc1.backward(self.act.backward(self.fc2.backward(grad_out)))


class TransformerBlock(Layer):
    """Pre-norm block: ``x + MHSA(LN(x))`` followed by ``x + FFN(LN(x))``."""

    def __init__(self, d: int, heads: int, rng: Rng | None = None, std: float = 0.02,
                 ffn_mult: int = 4):
        super().__init__()
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadSelfAttention(d, heads, rng, std)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, ffn_mult * d, rng, std)
        self.children = {"ln1": self.ln1, "attn": self.attn, "ln2": self.ln2, "ffn": self.ffn}

    def forward(self, x: Tensor, key_mask: Tensor | None = None) -> Tensor:
        h = x + self.attn.forward(self.ln1.forward(x), key_mask)
        return h + self.ffn.forward(self.ln2.forward(h))

    def backward(self, grad_out: Tensor) -> Tensor:
        gh = grad_out + self.ln2.backward(self.ffn.backward(grad_out))
        return gh + self.ln1.backward(self.attn.backward(gh))


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[float, Tensor]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} incompatible with labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
