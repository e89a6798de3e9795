"""Command-line front end: run experiments, sweep learning rates, compare runs.

    fedsketch run config.json
    fedsketch sweep config.json --lrs 0.05,0.1,0.2
    fedsketch report out/a.csv out/b.csv --target-accuracy 0.85

Exit codes: 0 success, 1 runtime failure, 2 configuration error. Set
FEDSKETCH_LOG=info (or debug) for progress logging.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, build_problem, load_config
from .simulation import ExperimentResult, run_experiment

CSV_COLUMNS = [
    "round",
    "clients",
    "uplink_payload_bytes_cum",
    "uplink_total_bytes_cum",
    "train_loss",
    "test_accuracy",
]


def write_metrics_csv(path: Path, result: ExperimentResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in result.records:
            if rec.test_accuracy is None:
                continue
            writer.writerow(
                [
                    rec.round_index,
                    len(rec.client_ids),
                    rec.payload_bytes_cum,
                    rec.total_bytes_cum,
                    f"{rec.train_loss:.6f}",
                    f"{rec.test_accuracy:.6f}",
                ]
            )


def save_model(path: Path, result: ExperimentResult) -> None:
    arrays = {f"layer:{l.name}": l.values for l in result.params.layers}
    arrays["compressible"] = np.array([l.compressible for l in result.params.layers])
    arrays["names"] = np.array([l.name for l in result.params.layers])
    np.savez(path, **arrays)


def execute(cfg: ExperimentConfig) -> ExperimentResult:
    model, clients, test = build_problem(cfg)
    return run_experiment(
        model,
        clients,
        test,
        cfg.rounds,
        cfg.round_cfg,
        cfg.compression,
        master_seed=cfg.seed,
        eval_interval=cfg.eval_interval,
    )


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = execute(cfg)
    out = Path(cfg.output)  # used as a path prefix
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.parent / f"{out.name}.csv"
    write_metrics_csv(csv_path, result)
    save_model(out.parent / f"{out.name}.model.npz", result)
    final = result.accuracies()
    if final:
        print(f"final accuracy {final[-1][1]:.4f} after {cfg.rounds} rounds, "
              f"{result.ledger.total / 1e6:.3f} MB uploaded")
    print(f"wrote {csv_path}")
    return 0


def _final_accuracy(csv_path: Path) -> float | None:
    rows = read_metrics_csv(csv_path)
    return float(rows[-1]["test_accuracy"]) if rows else None


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    try:
        lrs = [float(tok) for tok in args.lrs.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--lrs: {exc}") from exc
    if not lrs:
        raise ConfigError("--lrs: need at least one learning rate")

    out = Path(cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    results: list[tuple[float, Path, float | None, str]] = []
    for lr in lrs:
        sub_cfg = dataclasses.replace(
            cfg, round_cfg=dataclasses.replace(cfg.round_cfg, local_lr=lr)
        )
        path = out.parent / f"{out.name}_lr{lr:g}.csv"
        try:
            result = execute(sub_cfg)
            write_metrics_csv(path, result)
            results.append((lr, path, _final_accuracy(path), "ok"))
        except Exception as exc:  # keep sweeping remaining rates
            logging.getLogger(__name__).warning("lr %g failed: %s", lr, exc)
            results.append((lr, path, None, f"failed: {exc}"))

    best = None  # index of the winner; ties go to the earliest entry
    for i, (_, _, acc, _) in enumerate(results):
        if acc is not None and (best is None or acc > results[best][2]):
            best = i
    summary = out.parent / f"{out.name}_sweep.csv"
    with open(summary, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lr", "csv", "final_accuracy", "status", "best"])
        for i, (lr, path, acc, status) in enumerate(results):
            writer.writerow(
                [f"{lr:g}", path.name, "" if acc is None else f"{acc:.6f}", status,
                 "yes" if i == best else ""]
            )
    if best is None:
        print("sweep: all runs failed", file=sys.stderr)
        return 1
    lr, path, acc, _ = results[best]
    print(f"best lr {lr:g} with final accuracy {acc:.4f} ({path})")
    print(f"wrote {summary}")
    return 0


def read_metrics_csv(path: Path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != CSV_COLUMNS:
                raise ValueError(f"unexpected columns {reader.fieldnames}")
            rows = list(reader)
            for row in rows:
                float(row["test_accuracy"])
                int(row["round"])
                int(row["uplink_payload_bytes_cum"])
                int(row["uplink_total_bytes_cum"])
            return rows
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise ValueError(f"malformed metrics CSV {path}: {exc}") from exc


def cmd_report(args) -> int:
    target = args.target_accuracy
    lines = [f"{'run':<40} {'final_acc':>9} {'round@target':>12} {'MB@target':>10}"]
    for path in args.csvs:
        rows = read_metrics_csv(Path(path))
        final = float(rows[-1]["test_accuracy"]) if rows else float("nan")
        crossing = next((r for r in rows if float(r["test_accuracy"]) >= target), None)
        if crossing is None:
            lines.append(f"{Path(path).name:<40} {final:>9.4f} {'never':>12} {'never':>10}")
        else:
            mb = int(crossing["uplink_total_bytes_cum"]) / 1e6
            lines.append(
                f"{Path(path).name:<40} {final:>9.4f} {crossing['round']:>12} {mb:>10.3f}"
            )
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsketch",
        description="federated averaging with compressed uplink, at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the config once per learning rate")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--lrs", required=True, help="comma-separated learning rates")
    p_sweep.set_defaults(func=cmd_sweep)

    p_report = sub.add_parser("report", help="compare metrics CSVs at a target accuracy")
    p_report.add_argument("csvs", nargs="+")
    p_report.add_argument("--target-accuracy", type=float, default=0.85)
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("FEDSKETCH_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
