"""Small BERT-style text encoder and ViT-style image encoder.

Both prepend a CLS slot, run a stack of pre-norm transformer blocks and
project the CLS output to ``proj_dim``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .layers import Embedding, Layer, Linear, TransformerBlock
from .ndcore import Rng, ShapeError, Tensor

CLS_ID = 0
PAD_ID = 1
INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 256
    max_seq: int = 32
    d_model: int = 32
    heads: int = 4
    blocks: int = 2
    segments: int = 2
    image_side: int = 16
    patch_side: int = 4
    proj_dim: int = 8

    def validate(self) -> None:
        problems = []
        if self.d_model % self.heads:
            problems.append(f"d_model ({self.d_model}) % heads ({self.heads}) != 0")
        if self.image_side % self.patch_side:
            problems.append(
                f"image_side ({self.image_side}) % patch_side ({self.patch_side}) != 0"
            )
        if self.proj_dim < 1:
            problems.append(f"proj_dim ({self.proj_dim}) < 1")
        if self.vocab_size < 3:
            problems.append(f"vocab_size ({self.vocab_size}) leaves no room past CLS/PAD")
        for name in ("max_seq", "d_model", "heads", "blocks", "segments", "image_side",
                     "patch_side"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if problems:
            raise ValueError("invalid encoder config: " + "; ".join(problems))

    @property
    def num_patches(self) -> int:
        return (self.image_side // self.patch_side) ** 2

    def to_dict(self) -> dict:
        return asdict(self)


def extract_patches(images: Tensor, patch: int) -> Tensor:
    """Split ``(batch, H, W)`` images into row-major patches.

    Returns ``(batch, (H/patch)*(W/patch), patch*patch)``; each patch is
    flattened row-major.
    """
    b, h, w = images.shape
    gh, gw = h // patch, w // patch
    x = images.reshape(b, gh, patch, gw, patch).transpose(0, 1, 3, 2, 4)
    return x.reshape(b, gh * gw, patch * patch)


def assemble_patches(patches: Tensor, side: int, patch: int) -> Tensor:
    """Inverse of :func:`extract_patches`."""
    b = patches.shape[0]
    g = side // patch
    x = patches.reshape(b, g, g, patch, patch).transpose(0, 1, 3, 2, 4)
    return x.reshape(b, side, side)


class _Encoder(Layer):
    def __init__(self, config: EncoderConfig, rng: Rng):
        super().__init__()
        self.config = config
        self.blocks = [
            TransformerBlock(config.d_model, config.heads, rng, INIT_STD)
            for _ in range(config.blocks)
        ]
        self.proj = Linear(config.d_model, config.proj_dim, rng, INIT_STD)

    def _run_blocks(self, x: Tensor, key_mask: Tensor | None) -> Tensor:
        for block in self.blocks:
            x = block.forward(x, key_mask)
        self._seq_shape = x.shape
        return self.proj.forward(x[:, 0, :])

    def _backprop_blocks(self, grad_out: Tensor) -> Tensor:
        g = np.zeros(self._seq_shape)
        g[:, 0, :] = self.proj.backward(grad_out)
        for block in reversed(self.blocks):
            g = block.backward(g)
        return g


class TextEncoder(_Encoder):
    def __init__(self, config: EncoderConfig, rng: Rng):
        c = config
        super().__init__(config, rng)
        self.token_table = Embedding(c.vocab_size, c.d_model, rng, INIT_STD)
        self.position_table = Embedding(c.max_seq + 1, c.d_model, rng, INIT_STD)
        self.segment_table = Embedding(c.segments, c.d_model, rng, INIT_STD)
        self.children = {
            "token": self.token_table,
            "position": self.position_table,
            "segment": self.segment_table,
            **{f"block{i}": b for i, b in enumerate(self.blocks)},
            "proj": self.proj,
        }

    def prepare(self, token_lists: Sequence[Sequence[int]],
                segment_lists: Sequence[Sequence[int]] | None = None):
        """Validate, prepend CLS and pad a batch into id/segment/mask arrays."""
        c = self.config
        n = len(token_lists)
        width = 1 + max((len(t) for t in token_lists), default=0)
        ids = np.full((n, width), PAD_ID, dtype=np.int64)
        segs = np.zeros((n, width), dtype=np.int64)
        for i, toks in enumerate(token_lists):
            if len(toks) > c.max_seq:
                raise ValueError(f"sequence of length {len(toks)} exceeds max_seq {c.max_seq}")
            toks = np.asarray(toks, dtype=np.int64)
            if toks.size and (toks.min() < 0 or toks.max() >= c.vocab_size):
                raise ValueError(f"token id out of range [0, {c.vocab_size}) in sample {i}")
            if np.any(toks == CLS_ID):
                raise ValueError(f"token id {CLS_ID} is reserved for CLS (sample {i})")
            ids[i, 0] = CLS_ID
            ids[i, 1:1 + toks.size] = toks
            if segment_lists is not None:
                s = np.asarray(segment_lists[i], dtype=np.int64)
                if s.shape != toks.shape:
                    raise ShapeError(f"segment ids {s.shape} do not match tokens {toks.shape}")
                if s.size and (s.min() < 0 or s.max() >= c.segments):
                    raise ValueError(f"segment id out of range [0, {c.segments})")
                segs[i, 1:1 + s.size] = s
        return ids, segs, ids != PAD_ID

    def forward(self, token_lists, segment_lists=None) -> Tensor:
        ids, segs, mask = self.prepare(token_lists, segment_lists)
        positions = np.broadcast_to(np.arange(ids.shape[1]), ids.shape)
        x = (
            self.token_table.forward(ids)
            + self.position_table.forward(positions)
            + self.segment_table.forward(segs)
        )
        return self._run_blocks(x, mask)

    def backward(self, grad_out: Tensor) -> None:
        g = self._backprop_blocks(grad_out)
        self.token_table.backward(g)
        self.position_table.backward(g)
        self.segment_table.backward(g)


class ImageEncoder(_Encoder):
    def __init__(self, config: EncoderConfig, rng: Rng):
        c = config
        super().__init__(config, rng)
        self.patch_proj = Linear(c.patch_side ** 2, c.d_model, rng, INIT_STD)
        self.cls_vector = self.add_param("cls", rng.normal(c.d_model, std=INIT_STD))
        self.position_table = self.add_param(
            "position", rng.normal((c.num_patches + 1, c.d_model), std=INIT_STD)
        )
        self.children = {
            "patch_proj": self.patch_proj,
            **{f"block{i}": b for i, b in enumerate(self.blocks)},
            "proj": self.proj,
        }

    def embed(self, images: Tensor) -> Tensor:
        c = self.config
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        if images.shape[1:] != (c.image_side, c.image_side):
            raise ShapeError(
                f"expected {c.image_side}x{c.image_side} images, got {images.shape[1:]}"
            )
        tokens = self.patch_proj.forward(extract_patches(images, c.patch_side))
        cls = np.broadcast_to(self.params["cls"], (tokens.shape[0], 1, c.d_model))
        return np.concatenate([cls, tokens], axis=1) + self.params["position"]

    def forward(self, images: Tensor) -> Tensor:
        return self._run_blocks(self.embed(images), None)

    def backward(self, grad_out: Tensor) -> None:
        g = self._backprop_blocks(grad_out)
        self.grads["position"] += g.sum(axis=0)
        self.grads["cls"] += g[:, 0, :].sum(axis=0)
        self.patch_proj.backward(g[:, 1:, :])


def init_encoders(config: EncoderConfig, rng: Rng) -> tuple[TextEncoder, ImageEncoder]:
    config.validate()
    return TextEncoder(config, rng), ImageEncoder(config, rng)


def encode_text(enc: TextEncoder, tokens: Sequence[int],
                segment_ids: Sequence[int] | None = None) -> Tensor:
    segs = None if segment_ids is None else [segment_ids]
    return enc.forward([tokens], segs)[0]


def encode_image(enc: ImageEncoder, image: Tensor) -> Tensor:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"expected a single 2-D image, got shape {image.shape}")
    return enc.forward(image)[0]
