"""Command-line entry point: ``mmfusion <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .data import (
    RULES,
    gen_embedding_dataset,
    gen_raw_dataset,
    load_dataset,
    load_message_log,
    pair_messages,
    save_dataset,
    write_pairs,
)
from .engine import TrainConfig, evaluate, load_model, save_model, train
from .fusion import FusionKind
from .harness import run_ablation, run_bench

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _load_config(path: str | None, **overrides) -> TrainConfig:
    base = {}
    if path:
        with open(path) as fh:
            base = json.load(fh)
    return TrainConfig.from_dict(base, **overrides)


def cmd_gen_data(args) -> None:
    if args.mode == "embedding":
        ds = gen_embedding_dataset(args.rule, args.n, args.d, args.seed)
        save_dataset(ds, args.out, "embedding-csv")
    else:
        ds = gen_raw_dataset(args.rule, args.n, args.seed)
        save_dataset(ds, args.out, "raw-jsonl")
    print(f"wrote {len(ds)} samples to {args.out}")


def cmd_pair(args) -> None:
    pairs, dropped = pair_messages(load_message_log(args.log))
    diag = write_pairs(pairs, dropped, args.out, args.diag)
    print(json.dumps(diag))


def cmd_train(args) -> None:
    config = _load_config(args.config, seed=args.seed, fusion=args.fusion)
    bundle, history = train(load_dataset(args.data), config)
    save_model(bundle, args.out)
    if args.history:
        history.write_csv(args.history)
    last = history.epochs[-1] if history.epochs else None
    if last is not None:
        print(f"epoch {last.epoch}: train_loss={last.train_loss:.6f} "
              f"val_accuracy={last.val_accuracy}")


def cmd_eval(args) -> None:
    bundle = load_model(args.model)
    report = evaluate(bundle, load_dataset(args.data))
    with open(args.report, "w") as fh:
        fh.write(report.to_json() + "\n")
    if args.roc_csv:
        report.write_roc_csv(args.roc_csv)
    print(f"accuracy={report.accuracy:.4f} precision_macro={report.precision_macro:.4f} "
          f"auc_macro={report.auc_macro}")


def cmd_ablate(args) -> None:
    config = _load_config(args.config)
    report = run_ablation(args.data, config, args.seed, args.out_prefix)
    for r in report.rows:
        print(f"{r.fusion:15s} acc={r.accuracy:.4f} prec={r.precision_macro:.4f} auc={r.auc_macro}")


def cmd_bench(args) -> None:
    report = run_bench(args.model, args.data, args.batch, args.repeats, args.note)
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmfusion", description="Multimodal fusion classifier toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--mode", choices=("embedding", "raw"), default="embedding")
    g.add_argument("--rule", choices=RULES, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    pr = sub.add_parser("pair", help="pair images with the next text message")
    pr.add_argument("--log", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--diag", required=True)
    pr.set_defaults(func=cmd_pair)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--data", required=True)
    t.add_argument("--fusion", choices=[k.value for k in FusionKind], default=None)
    t.add_argument("--config", default=None, help="JSON file overriding TrainConfig defaults")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--history", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--roc-csv", default=None)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and compare all five fusion kinds")
    a.add_argument("--data", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out-prefix", required=True)
    a.add_argument("--config", default=None)
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench", help="time batched inference")
    b.add_argument("--model", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--batch", type=int, default=128)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--note", default="")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
