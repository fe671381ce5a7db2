"""Adam optimizer, training and evaluation loops, model serialization."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import collate, dataset_mode
from .encoders import EncoderConfig
from .fusion import FusionKind
from .metrics import EvalReport, accuracy, build_report
from .model import FORMAT_VERSION, NUM_CLASSES, ModelBundle, ModelConfig
from .ndcore import Rng, ShapeError, Tensor

log = logging.getLogger(__name__)


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    train_fraction: float = 0.8
    fusion: FusionKind = FusionKind.TENSOR_PRODUCT
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        object.__setattr__(self, "fusion", FusionKind.parse(self.fusion))
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig field(s): {sorted(unknown)}")
        d = dict(d)
        if "encoder" in d and isinstance(d["encoder"], dict):
            d["encoder"] = EncoderConfig(**d["encoder"])
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**d)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass
class OptimizerState:
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Iterable[tuple[str, Tensor, Tensor]], state: OptimizerState,
              config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place; gradients are zeroed after."""
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p, g in params:
        if p.shape != g.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        elif m.shape != p.shape:
            raise ShapeError(f"moment for {name} has shape {m.shape}, parameter {p.shape}")
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        g.fill(0.0)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float | None


@dataclass
class History:
    epochs: list[EpochRecord]
    train_indices: list[int]
    val_indices: list[int]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_accuracy"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.train_loss),
                            "" if r.val_accuracy is None else repr(r.val_accuracy)])


def stratified_split(labels: Sequence[int], train_fraction: float,
                     rng: Rng) -> tuple[list[int], list[int]]:
    """Per-class shuffled split; each class sends round(f * n_c) samples to train."""
    labels = np.asarray(labels, dtype=np.int64)
    train, val = [], []
    for c in range(NUM_CLASSES):
        idx = np.flatnonzero(labels == c)
        perm = [int(idx[i]) for i in rng.permutation(idx.size)] if idx.size else []
        k = int(round(train_fraction * idx.size))
        train += perm[:k]
        val += perm[k:]
    return sorted(train), sorted(val)


def _streams(seed: int) -> tuple[Rng, Rng, Rng]:
    root = Rng(seed)
    return root.spawn(), root.spawn(), root.spawn()


def split_dataset(dataset: Sequence, config: TrainConfig) -> tuple[list[int], list[int]]:
    """The split :func:`train` uses for ``(dataset, config)``."""
    split_rng, _, _ = _streams(config.seed)
    return stratified_split([s.label for s in dataset], config.train_fraction, split_rng)


def model_config_for(dataset: Sequence, config: TrainConfig) -> ModelConfig:
    mode = dataset_mode(dataset)
    if mode == "embedding":
        dims = {len(s.t) for s in dataset} | {len(s.v) for s in dataset}
        if len(dims) != 1:
            raise ShapeError(f"inconsistent embedding dimensions in dataset: {sorted(dims)}")
        return ModelConfig(config.fusion, "embedding", dims.pop(), config.encoder)
    return ModelConfig(config.fusion, "raw", config.encoder.proj_dim, config.encoder)


def predict_proba(bundle: ModelBundle, samples: Sequence, batch_size: int = 256) -> np.ndarray:
    out = [bundle.forward(collate(samples[i:i + batch_size]))
           for i in range(0, len(samples), batch_size)]
    bundle.last_logits = None
    return np.concatenate(out, axis=0)


def train(dataset: Sequence, config: TrainConfig) -> tuple[ModelBundle, History]:
    split_rng, init_rng, shuffle_rng = _streams(config.seed)
    labels = [s.label for s in dataset]
    train_idx, val_idx = stratified_split(labels, config.train_fraction, split_rng)
    missing = sorted(set(labels) - {labels[i] for i in train_idx})
    if missing:
        raise ValueError(f"class(es) {missing} missing from the training split")
    bundle = ModelBundle(model_config_for(dataset, config), init_rng)
    train_set = [dataset[i] for i in train_idx]
    val_set = [dataset[i] for i in val_idx]
    val_labels = [s.label for s in val_set]
    state = OptimizerState()
    params = list(bundle.named_parameters())
    bundle.zero_grad()
    records = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = collate([train_set[i] for i in order[start:start + config.batch_size]])
            bundle.forward(batch)
            total += bundle.backward(batch.labels) * len(batch)
            adam_step(params, state, config)
        val_acc = None
        if val_set:
            probs = predict_proba(bundle, val_set)
            val_acc = accuracy(np.argmax(probs, axis=1), val_labels)
        records.append(EpochRecord(epoch, total / len(train_set), val_acc))
        log.debug("epoch %d loss %.5f val_acc %s", epoch, records[-1].train_loss, val_acc)
    return bundle, History(records, train_idx, val_idx)


def evaluate(bundle: ModelBundle, dataset: Sequence) -> EvalReport:
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    start = time.perf_counter()
    probs = predict_proba(bundle, dataset)
    elapsed = time.perf_counter() - start
    report = build_report(probs, [s.label for s in dataset])
    report.timing = {"forward_seconds": elapsed}
    return report


def _tensor_record(p: Tensor) -> dict:
    return {"shape": list(p.shape), "data": [float(x) for x in p.ravel()]}


def model_to_dict(bundle: ModelBundle) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "config": bundle.config.to_dict(),
        "tensors": {name: _tensor_record(p) for name, p, _ in bundle.named_parameters()},
    }


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(bundle), fh)
        fh.write("\n")


def model_from_dict(doc: dict) -> ModelBundle:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r} "
                               f"(this build reads version {FORMAT_VERSION})")
    try:
        config = ModelConfig.from_dict(doc["config"])
        tensors = doc["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model config: {exc}") from None
    bundle = ModelBundle(config, Rng(0))
    expected = {name for name, _, _ in bundle.named_parameters()}
    extra = sorted(set(tensors) - expected)
    if extra:
        raise ModelFormatError(f"unexpected tensor(s) in model file: {extra}")
    for name, p, _ in bundle.named_parameters():
        if name not in tensors:
            raise ModelFormatError(f"missing tensor {name!r}")
        rec = tensors[name]
        shape = tuple(rec.get("shape", ()))
        data = rec.get("data", [])
        if shape != p.shape:
            raise ModelFormatError(f"tensor {name!r}: shape {list(shape)} != expected {list(p.shape)}")
        if len(data) != p.size:
            raise ModelFormatError(
                f"tensor {name!r}: data length {len(data)} != product of shape {p.size}"
            )
        p[...] = np.asarray(data, dtype=np.float64).reshape(shape)
    return bundle


def load_model(path: str | Path) -> ModelBundle:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(doc)
