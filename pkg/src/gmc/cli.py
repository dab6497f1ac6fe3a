"""Command-line entry point: ``gmc {embed,select,run,sweep,report}``.

Exit status is 0 on success, 2 for configuration or input errors and 3
for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from .embedding import EmbeddingSpec, build_embeddings, read_embeddings, sum_columns, write_embeddings
from .errors import ConfigError, NonFiniteError, SingularSystemError
from .harness import SWEEP_AXES, aggregate, load_config, read_metrics, run, sweep, write_metrics
from .memory import GmcMemory, write_snapshot
from .model import ArchSpec, InitSpec
from .omp import OmpConfig, omp_select
from .scenarios import DataFormatError, load_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

REPORT_COLUMNS = ["scenario", "paradigm", "strategy", "n", "axis", "value", "runs",
                  "mean_acc", "std_acc", "embed_s", "select_s", "train_s"]


def _cmd_embed(args) -> int:
    data = load_csv(args.data, args.label_column, not args.no_header)
    arch = ArchSpec(data.num_features, tuple(args.hidden), data.num_classes)
    spec = EmbeddingSpec(S=args.S, d=args.d, mode=args.mode,
                         init=InitSpec(args.init_family, args.init_scale, args.init_seed),
                         projection_seed=args.projection_seed, density=args.density)
    G = build_embeddings(data.weighted(), arch, spec)
    write_embeddings(args.out, G)
    print(f"wrote {G.dim}x{G.N} embedding matrix to {args.out}")
    return EXIT_OK


def _load_target(path, dim: int) -> np.ndarray:
    target = np.load(path) if str(path).endswith(".npy") else np.loadtxt(path)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if target.shape != (dim,):
        raise ConfigError(f"target has {target.size} entries, embeddings have dimension {dim}")
    return target


def _cmd_select(args) -> int:
    G = read_embeddings(args.embeddings)
    target = sum_columns(G) if args.target is None else _load_target(args.target, G.dim)
    cfg = OmpConfig(n=min(args.n, G.N), lam=args.lam, clip_negative=not args.no_clip)
    res = omp_select(G, target, cfg)
    record = {
        "indices": res.indices.tolist(),
        "weights": res.weights.tolist(),
        "raw_weights": res.raw_weights.tolist(),
        "residual_norm": res.residual_norm,
        "target_norm": float(np.linalg.norm(target)),
        "n_clipped": res.n_clipped,
        "stopped_early": res.stopped_early,
    }
    with open(args.out, "w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
    if args.snapshot:
        if not args.data:
            raise ConfigError("--snapshot needs --data to recover the selected rows")
        data = load_csv(args.data, args.label_column, not args.no_header)
        if len(data) != G.N:
            raise ConfigError(f"data has {len(data)} rows but the embedding has {G.N} columns")
        mem = GmcMemory(args.n, cfg)
        mem.features = data.features[res.indices]
        mem.labels = data.labels[res.indices]
        mem.weights = res.weights
        write_snapshot(mem, args.snapshot)
    print(f"selected {len(res.indices)} of {G.N}; residual {res.residual_norm:.6g}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    metrics = run(cfg)
    write_metrics(metrics, args.out, append=args.append)
    for m in metrics:
        print(f"{m.run_id}: final accuracy {m.final_acc:.4f}")
    return EXIT_OK


def _parse_value(axis: str, raw: str):
    if axis == "init_family":
        return raw
    return int(raw) if axis in ("S", "d") else float(raw)


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    try:
        values = [_parse_value(args.axis, v) for v in args.values]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value: {exc}") from exc
    metrics = sweep(cfg, args.axis, values)
    write_metrics(metrics, args.out, append=args.append)
    for row in aggregate(metrics):
        print(f"{args.axis}={row['value']}: {row['mean_acc']:.4f} +- {row['std_acc']:.4f}")
    return EXIT_OK


def format_table(rows: list[dict]) -> str:
    cells = [[_fmt(r[c]) for c in REPORT_COLUMNS] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(REPORT_COLUMNS)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return "-" if v is None else str(v)


def _cmd_report(args) -> int:
    metrics = []
    for path in args.metrics:
        metrics.extend(read_metrics(path))
    rows = aggregate(metrics)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    print(format_table(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmc", description="Gradient-matching coresets for continual learning")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("embed", help="embed a CSV dataset into a binary embedding file")
    e.add_argument("--data", required=True)
    e.add_argument("--label-column", default="label")
    e.add_argument("--no-header", action="store_true")
    e.add_argument("--hidden", type=int, nargs="*", default=[128, 128])
    e.add_argument("--S", type=int, default=10)
    e.add_argument("--d", type=int, default=1000)
    e.add_argument("--mode", choices=["full", "last_layer"], default="full")
    e.add_argument("--init-family", choices=["he_uniform", "he_normal"], default="he_uniform")
    e.add_argument("--init-scale", type=float, default=1.0)
    e.add_argument("--init-seed", type=int, default=0)
    e.add_argument("--projection-seed", type=int, default=0)
    e.add_argument("--density", type=float, default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_embed)

    s = sub.add_parser("select", help="select a weighted coreset from an embedding file")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--target", help=".npy or text vector; defaults to the column sum")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--lam", type=float, default=0.5)
    s.add_argument("--no-clip", action="store_true")
    s.add_argument("--out", required=True, help="coreset record (JSON)")
    s.add_argument("--data", help="CSV the embeddings were built from (for --snapshot)")
    s.add_argument("--label-column", default="label")
    s.add_argument("--no-header", action="store_true")
    s.add_argument("--snapshot", help="also write a binary memory snapshot")
    s.set_defaults(func=_cmd_select)

    r = sub.add_parser("run", help="run the configured experiment for every seed")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="metrics file (JSON lines)")
    r.add_argument("--append", action="store_true")
    r.set_defaults(func=_cmd_run)

    w = sub.add_parser("sweep", help="vary one hyperparameter of a base config")
    w.add_argument("--config", required=True)
    w.add_argument("--axis", required=True, choices=SWEEP_AXES)
    w.add_argument("--values", required=True, nargs="+")
    w.add_argument("--out", required=True)
    w.add_argument("--append", action="store_true")
    w.set_defaults(func=_cmd_sweep)

    t = sub.add_parser("report", help="aggregate metrics files into a table or CSV")
    t.add_argument("metrics", nargs="+")
    t.add_argument("--csv")
    t.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteError, SingularSystemError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # remaining input validation failures
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
