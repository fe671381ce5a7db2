"""Message pairing, synthetic dataset generators and dataset file formats."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .encoders import EncoderConfig
from .model import LABEL_NAMES, Batch
from .ndcore import Rng, Tensor

RULES = ("text-only", "image-only", "additive", "multiplicative")
FORMATS = ("embedding-csv", "raw-jsonl")

# Standard-normal quantile at 2/3: P(|x| <= TAU_LINEAR) = 1/3.
TAU_LINEAR = 0.4307272992954576
# P(|x*y| <= TAU_PRODUCT) = 1/3 for independent standard normals.
TAU_PRODUCT = 0.1868243441613497

MARKER_TOKENS = (10, 11, 12)
FILLER_LOW = 13
TEXT_LENGTH = (6, 12)
BRIGHT = 0.9
NOISE_HIGH = 0.2
# Row a, column b -> label. Every row and column is a permutation of the classes.
LATIN_SQUARE = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


@dataclass
class MessageLogEntry:
    timestamp: int
    kind: str
    payload: Any


@dataclass
class RawSample:
    id: str
    tokens: list[int]
    image: Tensor
    label: int


@dataclass
class EmbeddingSample:
    id: str
    t: Tensor
    v: Tensor
    label: int


def label_index(name: str) -> int:
    try:
        return LABEL_NAMES.index(name)
    except ValueError:
        raise DataError(f"unknown label {name!r}") from None


def _threshold_class(score: np.ndarray, tau: float) -> np.ndarray:
    return np.where(score > tau, 0, np.where(score < -tau, 1, 2))


def pair_messages(log: Sequence[MessageLogEntry]):
    """Pair each image with the first text message strictly after it.

    Returns ``(pairs, dropped)`` where ``pairs`` holds
    ``(image, text, pairing_timestamp)`` tuples and ``dropped`` the image
    payloads that no later text followed.
    """
    for prev, cur in zip(log, log[1:]):
        if cur.timestamp <= prev.timestamp:
            raise DataError(
                f"timestamps must be strictly increasing ({prev.timestamp} then {cur.timestamp})"
            )
    pairs, waiting = [], []
    for entry in log:
        if entry.kind == "image":
            waiting.append(entry.payload)
        elif entry.kind == "text":
            pairs.extend((img, entry.payload, entry.timestamp) for img in waiting)
            waiting = []
        else:
            raise DataError(f"unknown message kind {entry.kind!r}")
    return pairs, waiting


def gen_embedding_dataset(rule: str, n: int, d: int, seed: int) -> list[EmbeddingSample]:
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r} (expected one of {', '.join(RULES)})")
    if n < 1 or d < 2:
        raise ValueError("need n >= 1 and d >= 2")
    rng = Rng(seed)
    t = rng.normal((n, d))
    v = rng.normal((n, d))
    if rule == "text-only":
        labels = _threshold_class(t[:, 0], TAU_LINEAR)
    elif rule == "image-only":
        labels = _threshold_class(v[:, 0], TAU_LINEAR)
    elif rule == "additive":
        labels = _threshold_class((t[:, 0] + v[:, 0]) / math.sqrt(2.0), TAU_LINEAR)
    else:
        labels = _threshold_class(t[:, 0] * v[:, 0], TAU_PRODUCT)
    return [
        EmbeddingSample(f"emb-{i:06d}", t[i].copy(), v[i].copy(), int(labels[i]))
        for i in range(n)
    ]


def _make_text(rng: Rng, marker: int | None, vocab: int) -> list[int]:
    length = TEXT_LENGTH[0] + rng.below(TEXT_LENGTH[1] - TEXT_LENGTH[0] + 1)
    tokens = [FILLER_LOW + rng.below(vocab - FILLER_LOW) for _ in range(length)]
    if marker is not None:
        tokens[rng.below(length)] = MARKER_TOKENS[marker]
    return tokens


def _make_image(rng: Rng, quadrant: int | None, side: int) -> Tensor:
    img = rng.uniform((side, side), 0.0, NOISE_HIGH)
    if quadrant is not None:
        h = side // 2
        r, c = divmod(quadrant, 2)
        img[r * h:(r + 1) * h, c * h:(c + 1) * h] = BRIGHT
    return img


def gen_raw_dataset(rule: str, n: int, seed: int,
                    config: EncoderConfig | None = None) -> list[RawSample]:
    """Token/image samples whose label is planted per ``rule``.

    Text carries a marker token ``10 + a`` among filler tokens; the image has
    quadrant ``b`` (row-major over the four quadrants; only the first three
    are ever used) set to 0.9 over uniform noise in ``[0, 0.2]``. The
    multiplicative rule labels ``LATIN_SQUARE[a][b]`` with ``a`` and ``b``
    independent, so neither modality alone carries label information.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r} (expected one of {', '.join(RULES)})")
    if n < 1:
        raise ValueError("need n >= 1")
    config = config or EncoderConfig()
    if config.image_side % 2:
        raise ValueError("image_side must be even to form quadrants")
    if config.vocab_size <= FILLER_LOW or config.max_seq < TEXT_LENGTH[1]:
        raise ValueError("encoder config too small for the raw generator")
    rng = Rng(seed)
    samples = []
    for i in range(n):
        a, b = rng.below(3), rng.below(3)
        if rule == "text-only":
            label, marker, quadrant = a, a, None
        elif rule == "image-only":
            label, marker, quadrant = b, None, b
        elif rule == "additive":
            label, marker, quadrant = a, a, a
        else:
            label, marker, quadrant = LATIN_SQUARE[a][b], a, b
        tokens = _make_text(rng, marker, config.vocab_size)
        image = _make_image(rng, quadrant, config.image_side)
        samples.append(RawSample(f"raw-{i:06d}", tokens, image, label))
    return samples


def dataset_mode(dataset: Sequence) -> str:
    if not dataset:
        raise DataError("no samples")
    return "embedding" if isinstance(dataset[0], EmbeddingSample) else "raw"


def collate(samples: Sequence) -> Batch:
    labels = np.array([s.label for s in samples], dtype=np.int64)
    if isinstance(samples[0], EmbeddingSample):
        return Batch(labels, t=np.stack([s.t for s in samples]),
                     v=np.stack([s.v for s in samples]))
    return Batch(labels, tokens=[s.tokens for s in samples],
                 images=np.stack([s.image for s in samples]))


def infer_format(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "embedding-csv"
    if suffix in (".jsonl", ".json"):
        return "raw-jsonl"
    raise DataError(f"cannot infer dataset format from {path!s}; use .csv or .jsonl")


def save_dataset(dataset: Sequence, path: str | Path, format: str | None = None) -> None:
    format = format or infer_format(path)
    if format == "embedding-csv":
        d = len(dataset[0].t)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "label"] + [f"t_{i}" for i in range(d)] + [f"v_{i}" for i in range(d)])
            for s in dataset:
                w.writerow([s.id, LABEL_NAMES[s.label]]
                           + [repr(float(x)) for x in s.t] + [repr(float(x)) for x in s.v])
    elif format == "raw-jsonl":
        with open(path, "w") as fh:
            for s in dataset:
                rec = {"id": s.id, "tokens": [int(x) for x in s.tokens],
                       "image": [float(x) for x in np.ravel(s.image)],
                       "label": LABEL_NAMES[s.label]}
                fh.write(json.dumps(rec) + "\n")
    else:
        raise DataError(f"unknown dataset format {format!r}")


def _load_csv(path) -> list[EmbeddingSample]:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no samples")
        if len(header) < 4 or header[:2] != ["id", "label"] or (len(header) - 2) % 2:
            raise DataError(f"{path}: line 1: bad header")
        d = (len(header) - 2) // 2
        expected = ["id", "label"] + [f"t_{i}" for i in range(d)] + [f"v_{i}" for i in range(d)]
        if header != expected:
            raise DataError(f"{path}: line 1: header does not match id,label,t_0..,v_0..")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                values = np.array([float(x) for x in row[2:]], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise DataError(f"{path}: line {lineno}: non-finite value")
            try:
                label = label_index(row[1])
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            samples.append(EmbeddingSample(row[0], values[:d], values[d:], label))
    if not samples:
        raise DataError(f"{path}: no samples")
    return samples


def _load_jsonl(path) -> list[RawSample]:
    samples = []
    side = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                image = np.asarray(rec["image"], dtype=np.float64)
                tokens = [int(x) for x in rec["tokens"]]
                sid = str(rec["id"])
                label = label_index(rec["label"])
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            k = math.isqrt(image.size)
            if image.ndim == 1 and k * k == image.size:
                image = image.reshape(k, k)
            if image.ndim != 2 or image.shape[0] != image.shape[1]:
                raise DataError(f"{path}: line {lineno}: image is not square")
            if side is None:
                side = image.shape[0]
            elif image.shape[0] != side:
                raise DataError(f"{path}: line {lineno}: image side {image.shape[0]} != {side}")
            if not np.all((image >= 0) & (image <= 1)):
                raise DataError(f"{path}: line {lineno}: image values outside [0, 1]")
            samples.append(RawSample(sid, tokens, image, label))
    if not samples:
        raise DataError(f"{path}: no samples")
    return samples


def load_dataset(path: str | Path, format: str | None = None) -> list:
    format = format or infer_format(path)
    if format == "embedding-csv":
        return _load_csv(path)
    if format == "raw-jsonl":
        return _load_jsonl(path)
    raise DataError(f"unknown dataset format {format!r}")


def load_message_log(path: str | Path) -> list[MessageLogEntry]:
    log = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                log.append(MessageLogEntry(int(rec["timestamp"]), rec["kind"], rec["payload"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
    return log


def write_pairs(pairs, dropped, out_path: str | Path, diag_path: str | Path) -> dict:
    with open(out_path, "w") as fh:
        for i, (image, text, ts) in enumerate(pairs):
            rec = {"id": f"pair-{i:06d}", "timestamp": ts,
                   "tokens": text, "image": [float(x) for x in np.ravel(image)]}
            fh.write(json.dumps(rec) + "\n")
    diag = {"paired": len(pairs), "dropped": len(dropped)}
    with open(diag_path, "w") as fh:
        json.dump(diag, fh)
        fh.write("\n")
    return diag
