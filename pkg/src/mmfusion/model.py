"""End-to-end classifier: encoders, fusion and an MLP head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import EncoderConfig, ImageEncoder, TextEncoder, init_encoders
from .fusion import Fusion, FusionKind, fused_dim
from .layers import GELU, Layer, Linear, softmax_cross_entropy
from .ndcore import Rng, ShapeError, Tensor, softmax

NUM_CLASSES = 3
LABEL_NAMES = ("positive", "negative", "neutral")
HEAD_HIDDEN = 32
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of a :class:`ModelBundle`.

    ``mode`` is ``"raw"`` (tokens and images go through the encoders) or
    ``"embedding"`` (precomputed ``t``/``v`` vectors of length ``input_dim``
    are fused directly).
    """

    fusion: FusionKind = FusionKind.TENSOR_PRODUCT
    mode: str = "raw"
    input_dim: int = 8
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head_hidden: int = HEAD_HIDDEN
    classes: int = NUM_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "fusion", FusionKind.parse(self.fusion))
        if self.mode not in ("raw", "embedding"):
            raise ValueError(f"unknown model mode {self.mode!r}")
        if self.mode == "raw" and self.input_dim != self.encoder.proj_dim:
            object.__setattr__(self, "input_dim", self.encoder.proj_dim)
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.classes != NUM_CLASSES:
            raise ValueError(f"the classifier has exactly {NUM_CLASSES} classes")

    @property
    def fused_dim(self) -> int:
        return fused_dim(self.fusion, self.input_dim)

    def to_dict(self) -> dict:
        return {
            "fusion": self.fusion.value,
            "mode": self.mode,
            "input_dim": self.input_dim,
            "encoder": self.encoder.to_dict(),
            "head_hidden": self.head_hidden,
            "classes": self.classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            fusion=FusionKind.parse(d["fusion"]),
            mode=d["mode"],
            input_dim=int(d["input_dim"]),
            encoder=EncoderConfig(**d["encoder"]),
            head_hidden=int(d["head_hidden"]),
            classes=int(d["classes"]),
        )


@dataclass
class Batch:
    """Collated model inputs; which fields are set depends on the data mode."""

    labels: np.ndarray
    t: Tensor | None = None
    v: Tensor | None = None
    tokens: list | None = None
    segments: list | None = None
    images: Tensor | None = None

    def __len__(self) -> int:
        return len(self.labels)


class ModelBundle(Layer):
    def __init__(self, config: ModelConfig, rng: Rng):
        super().__init__()
        self.config = config
        self.format_version = FORMAT_VERSION
        self.text_encoder: TextEncoder | None = None
        self.image_encoder: ImageEncoder | None = None
        if config.mode == "raw":
            self.text_encoder, self.image_encoder = init_encoders(config.encoder, rng)
            self.children = {"text": self.text_encoder, "image": self.image_encoder}
        self.fusion = Fusion(config.fusion)
        self.fc1 = Linear(config.fused_dim, config.head_hidden, rng)
        self.act = GELU()
        self.fc2 = Linear(config.head_hidden, config.classes, rng)
        self.children.update({"head.fc1": self.fc1, "head.fc2": self.fc2})
        if self.fc1.din != self.fusion_width():
            raise ShapeError("head input width does not match the fusion output width")
        self.last_logits: Tensor | None = None
        self._ran_text = self._ran_image = False

    def fusion_width(self) -> int:
        return fused_dim(self.config.fusion, self.config.input_dim)

    def zero_head(self) -> None:
        for layer in (self.fc1, self.fc2):
            for p in layer.params.values():
                p.fill(0.0)

    def _modal_vectors(self, batch: Batch) -> tuple[Tensor | None, Tensor | None]:
        kind = self.config.fusion
        if self.config.mode == "embedding":
            t, v = batch.t, batch.v
            for name, x in (("t", t), ("v", v)):
                if x is not None and x.shape[-1] != self.config.input_dim:
                    raise ShapeError(
                        f"{name} has dimension {x.shape[-1]}, model expects {self.config.input_dim}"
                    )
            self._ran_text = self._ran_image = False
            return (t if kind.uses_text else None), (v if kind.uses_image else None)
        t = v = None
        self._ran_text = kind.uses_text
        self._ran_image = kind.uses_image
        if self._ran_text:
            t = self.text_encoder.forward(batch.tokens, batch.segments)
        if self._ran_image:
            v = self.image_encoder.forward(batch.images)
        return t, v

    def forward(self, batch: Batch) -> Tensor:
        """Class probabilities, shape ``(batch, 3)``."""
        t, v = self._modal_vectors(batch)
        z = self.fusion.forward(t, v)
        logits = self.fc2.forward(self.act.forward(self.fc1.forward(z)))
        self.last_logits = logits
        return softmax(logits)

    def backward_logits(self, grad_logits: Tensor) -> None:
        gz = self.fc1.backward(self.act.backward(self.fc2.backward(grad_logits)))
        gt, gv = self.fusion.backward(gz)
        if self._ran_text:
            self.text_encoder.backward(gt)
        if self._ran_image:
            self.image_encoder.backward(gv)

    def backward(self, labels) -> float:
        """Cross-entropy against ``labels``; accumulates all gradients."""
        if self.last_logits is None:
            raise RuntimeError("model backward called before forward")
        loss, grad = softmax_cross_entropy(self.last_logits, labels)
        self.last_logits = None
        self.backward_logits(grad)
        return loss


def build_model(config: ModelConfig, seed_or_rng) -> ModelBundle:
    rng = seed_or_rng if isinstance(seed_or_rng, Rng) else Rng(seed_or_rng)
    return ModelBundle(config, rng)


def model_forward(bundle: ModelBundle, sample) -> Tensor:
    from .data import collate

    return bundle.forward(collate([sample]))[0]


def model_backward(bundle: ModelBundle, probs: Tensor, label: int) -> float:
    """Backward pass for a single sample after :func:`model_forward`.

    The logit gradient is ``probs - onehot``; the loss is taken from the
    cached logits so it stays finite when a probability underflows.
    """
    if bundle.last_logits is None:
        raise RuntimeError("model backward called before forward")
    probs = np.asarray(probs, dtype=np.float64).reshape(1, -1)
    if not 0 <= label < probs.shape[1]:
        raise ValueError(f"label {label} out of range")
    loss, _ = softmax_cross_entropy(bundle.last_logits, [label])
    grad = probs.copy()
    grad[0, label] -= 1.0
    bundle.last_logits = None
    bundle.backward_logits(grad)
    return loss
