"""Fusion ablation runner and inference benchmark."""

from __future__ import annotations

import csv
import json
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from threadpoolctl import threadpool_limits

from .data import collate, load_dataset
from .engine import TrainConfig, evaluate, load_model, train
from .fusion import ABLATION_ORDER

ABLATION_COLUMNS = ("fusion", "accuracy", "precision_macro", "auc_macro")


@dataclass
class AblationRow:
    fusion: str
    accuracy: float
    precision_macro: float
    auc_macro: float | None


@dataclass
class AblationReport:
    rows: list[AblationRow]
    seed: int
    config: dict
    train_size: int
    val_size: int

    def row(self, fusion: str) -> AblationRow:
        return next(r for r in self.rows if r.fusion == fusion)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, prefix: str | Path) -> tuple[Path, Path]:
        prefix = str(prefix)
        csv_path, json_path = Path(prefix + ".csv"), Path(prefix + ".json")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ABLATION_COLUMNS)
            for r in self.rows:
                w.writerow([r.fusion, repr(r.accuracy), repr(r.precision_macro),
                            "" if r.auc_macro is None else repr(r.auc_macro)])
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        return csv_path, json_path


def _config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["fusion"] = config.fusion.value
    return d


def run_ablation(dataset: str | Path | Sequence, config: TrainConfig | None = None,
                 seed: int = 0, out_prefix: str | Path | None = None) -> AblationReport:
    """Train and evaluate all five fusion kinds on one shared split.

    Any failing row aborts the whole run.
    """
    if isinstance(dataset, (str, Path)):
        dataset = load_dataset(dataset)
    config = (config or TrainConfig()).with_(seed=seed)
    rows, split = [], None
    for kind in ABLATION_ORDER:
        bundle, history = train(dataset, config.with_(fusion=kind))
        this_split = (history.train_indices, history.val_indices)
        if split is None:
            split = this_split
        elif this_split != split:
            raise RuntimeError(f"{kind.value} row trained on a different split")
        report = evaluate(bundle, [dataset[i] for i in history.val_indices])
        rows.append(AblationRow(kind.value, report.accuracy, report.precision_macro,
                                report.auc_macro))
    cfg = _config_dict(config)
    cfg.pop("fusion")
    result = AblationReport(rows, seed, cfg, len(split[0]), len(split[1]))
    if out_prefix is not None:
        result.write(out_prefix)
    return result


@dataclass
class BenchReport:
    batch_size: int
    repeats: int
    batches: int
    wall_seconds: list[float]
    mean_seconds: float
    std_seconds: float
    mean_batch_seconds: float
    samples_per_second: float
    note: str = ""
    platform: str = field(default_factory=platform.platform)

    def to_dict(self) -> dict:
        return asdict(self)


def run_bench(model, dataset, batch_size: int = 128, repeats: int = 5,
              note: str = "") -> BenchReport:
    """Time forward passes over every full batch of ``dataset``.

    The first repeat is a warm-up and is not reported. Timing runs with BLAS
    limited to one thread.
    """
    if repeats < 3:
        raise ValueError("repeats must be >= 3 (one warm-up plus at least two timed)")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(model, (str, Path)):
        model = load_model(model)
    if isinstance(dataset, (str, Path)):
        dataset = load_dataset(dataset)
    n_batches = len(dataset) // batch_size
    if n_batches == 0:
        raise ValueError(f"dataset has {len(dataset)} samples, fewer than batch size {batch_size}")
    batches = [collate(dataset[i * batch_size:(i + 1) * batch_size]) for i in range(n_batches)]
    walls = []
    with threadpool_limits(limits=1):
        for _ in range(repeats):
            start = time.perf_counter()
            for b in batches:
                model.forward(b)
            walls.append(time.perf_counter() - start)
    model.last_logits = None
    timed = walls[1:]
    mean = statistics.fmean(timed)
    return BenchReport(
        batch_size=batch_size,
        repeats=repeats,
        batches=n_batches,
        wall_seconds=timed,
        mean_seconds=mean,
        std_seconds=statistics.stdev(timed),
        mean_batch_seconds=mean / n_batches,
        samples_per_second=batch_size * n_batches / mean,
        note=note,
    )
