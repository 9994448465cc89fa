"""Command-line entry point: ``forestsel <subcommand> ...``.

Exit codes: 0 success, 1 error, 2 success with warnings (for ``select``,
an empty selection or a failed fold).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataError,
    Dataset,
    build_column,
    ingest_csv,
    quartile_classes,
    read_schema,
    read_table,
)
from .forest import Forest, load_forest, predict_forest, save_forest
from .pipeline import StrategyConfig, run_lolo_dcv
from .simgen import SimSpec, simulate, sweep_variable_counts, write_simulation

logger = logging.getLogger("forestsel")

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def read_overlay(path) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}, line {i}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _coerce(field: dataclasses.Field, raw: str):
    name = field.name
    if name == "candidate_grid":
        return [int(x) for x in raw.replace(",", " ").split()] if raw.lower() != "none" else None
    if name in ("grouped", "refit_and_select", "strict_vi_min"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {raw!r}")
    if name == "feature_subset_size":
        return None if raw.lower() == "none" else int(raw)
    if name in ("strategy", "sign_convention"):
        return raw
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{name}: expected an integer, got {raw!r}") from None


def build_config(overlay: dict[str, str], flags: dict) -> StrategyConfig:
    """Defaults, then the overlay file, then explicit flags."""
    fields = {f.name: f for f in dataclasses.fields(StrategyConfig)}
    values = {}
    for k, raw in overlay.items():
        if k not in fields:
            raise UsageError(f"unknown config key {k!r}")
        values[k] = _coerce(fields[k], raw)
    values.update({k: v for k, v in flags.items() if v is not None})
    try:
        return StrategyConfig(**values)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")


def _grid(text):
    try:
        grid = [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None
    if not grid:
        raise argparse.ArgumentTypeError("empty grid")
    return grid


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _folds(text):
    v = int(text)
    if v < 2:
        raise argparse.ArgumentTypeError(f"needs at least 2 folds, got {v}")
    return v


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    mix = tuple(args.mix) if args.mix else (0.25, 0.25, 0.25, 0.25)
    try:
        spec = SimSpec(p=args.p, n=args.n, mix=mix, beta_seed=args.seed, data_seed=args.seed, linear_clip=args.linear_clip)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = simulate(spec)
    csv_path, truth_path = write_simulation(data, args.out, target_name=args.target)
    print(f"wrote {csv_path} and {truth_path} (clip rate {data.meta['simulation']['clip_rate']:.3f})")
    return EXIT_OK


def _load_selection_data(args) -> tuple[Dataset, dict]:
    truth, schema, inputs = None, None, {"data": {"path": args.data, "sha256": file_digest(args.data)}}
    if args.truth:
        sidecar = json.loads(Path(args.truth).read_text(encoding="utf-8"))
        truth = sidecar["true_variables"]
        schema = sidecar.get("schema")
        inputs["truth"] = {"path": args.truth, "sha256": file_digest(args.truth)}
    if args.schema:
        schema = read_schema(args.schema)
        inputs["schema"] = {"path": args.schema, "sha256": file_digest(args.schema)}
    data = ingest_csv(
        args.data,
        schema,
        args.target,
        group_name=args.group,
        exclude=args.exclude or (),
        truth=truth,
    )
    return data, inputs


def cmd_select(args) -> int:
    overlay = read_overlay(args.config) if args.config else {}
    flags = {
        "strategy": args.strategy,
        "outer_folds": args.folds,
        "grouped": True if args.group else None,
        "n_r": args.n_r,
        "candidate_grid": args.grid,
        "seed": args.seed,
        "refit_and_select": False if args.no_refit else None,
        "vi_min_ntree": args.vi_min_ntree,
        "strict_vi_min": True if args.strict_vi_min else None,
        "sign_convention": args.sign_convention,
    }
    config = build_config(overlay, flags)
    data, inputs = _load_selection_data(args)
    if args.config:
        inputs["config"] = {"path": args.config, "sha256": file_digest(args.config)}
    provenance = {
        "version": __version__,
        "command": "select",
        "inputs": inputs,
        "target": args.target,
        "group": args.group,
        "exclude": list(args.exclude or ()),
        "settings": dataclasses.asdict(config),
        "inferred_kinds": data.meta.get("inferred_kinds", {}),
    }
    report = run_lolo_dcv(data, config, threads=args.threads, provenance=provenance)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.json", report.to_json())
    _write(out / "importance.csv", report.importance_csv())
    _write(out / "summary.txt", report.summary())
    if report.final_model is not None:
        save_model(report.final_model, out / "model", {"selected": report.selected, "provenance": provenance})
    sys.stdout.write(report.summary())
    return EXIT_WARN if report.warnings else EXIT_OK


def save_model(model, directory: Path, extra: dict):
    """Bundle a forest, a single tree (a one-tree forest) or a constant model."""
    if isinstance(model, Forest):
        kind, forest = "forest", model
    else:
        kind = "constant" if model.feature_count == 0 else "tree"
        forest = Forest([model], model.min_node_size, model.feature_subset_size, model.seed, model.schema)
    return save_forest(forest, directory, {**extra, "model_kind": kind})


def _feature_rows(path, schema: list[dict]) -> tuple[Dataset, list[str]]:
    header, rows = read_table(path)
    missing = [c["name"] for c in schema if c["name"] not in header]
    if missing:
        raise DataError(f"{path}: missing model variable(s) {', '.join(missing)}")
    columns = []
    for spec in schema:
        j = header.index(spec["name"])
        columns.append(build_column(spec["name"], spec["kind"], [r[j] for r in rows]))
    dummy = np.zeros(len(rows), dtype=np.int64)
    return Dataset(tuple(columns), dummy), header


def cmd_predict(args) -> int:
    forest, manifest = load_forest(args.model)
    data, header = _feature_rows(args.data, forest.schema)
    if args.id_column:
        if args.id_column not in header:
            raise DataError(f"id column {args.id_column!r} not found in {args.data}")
        _, rows = read_table(args.data)
        ids = [r[header.index(args.id_column)] for r in rows]
    else:
        ids = [str(i) for i in range(data.n)]
    pred = predict_forest(forest, data)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["row_id", "prediction"])
        for i, p in zip(ids, pred):
            w.writerow([i, repr(float(p))])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_sweep(args) -> int:
    overlay = read_overlay(args.config) if args.config else {}
    flags = {
        "strategy": args.strategy,
        "outer_folds": args.folds,
        "n_r": args.n_r,
        "candidate_grid": args.grid,
        "seed": args.seed,
        "refit_and_select": False,
        "vi_min_ntree": args.vi_min_ntree,
        "sign_convention": args.sign_convention,
    }
    config = build_config(overlay, flags)
    try:
        base = SimSpec(p=1, n=args.n, beta_seed=args.seed, data_seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for t in args.totals:
        if t < 2 or t % 2:
            raise UsageError(f"variable totals must be even and >= 2, got {t}")
    rows = sweep_variable_counts(base, args.totals, config, threads=args.threads)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(out, ["total_vars", "SP", "SA", "VI_min", "seconds"], extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_recode_quartiles(args) -> int:
    header, rows = read_table(args.data)
    targets = args.columns or []
    for name in targets:
        if name not in header:
            raise DataError(f"column {name!r} not found in {args.data}")
    if not targets:
        for j, name in enumerate(header):
            try:
                build_column(name, "continuous", [r[j] for r in rows])
            except DataError:
                continue
            targets.append(name)
    status = EXIT_OK
    comments = []
    for name in targets:
        j = header.index(name)
        try:
            col = build_column(name, "continuous", [r[j] for r in rows])
        except DataError as exc:
            raise DataError(f"column {name!r} is not numeric: {exc}") from None
        classes, bounds = quartile_classes(col.values)
        if len(set(classes)) == 1:
            logger.warning("column %r is constant; a single class", name)
            status = EXIT_WARN
        comments.append(f"# quartiles {name}: " + ",".join(repr(b) for b in bounds))
        for r, c in zip(rows, classes):
            r[j] = c
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        for line in comments:
            out.write(line + "\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return status


# ---------------------------------------------------------------- parser


def _strategy_flags(p):
    p.add_argument("--strategy", type=str.upper, help="LDRF (forest) or LDRT (tree)")
    p.add_argument("--folds", type=_folds, help="outer folds N (>= 2)")
    p.add_argument("--n-r", dest="n_r", type=_positive, help="repetitions for the importance threshold")
    p.add_argument("--grid", type=_grid, help="candidate m values, comma separated")
    p.add_argument("--vi-min-ntree", type=_positive, help="trees per threshold run (forest)")
    p.add_argument("--sign-convention", choices=["signed", "positive"])
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key=value overlay file")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forestsel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset and its truth sidecar")
    p.add_argument("--p", type=_positive, required=True, help="true variables (as many decoys are added)")
    p.add_argument("--n", type=int, required=True, help="observations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mix", type=float, nargs=4, metavar=("GAUSS", "DISCRETE", "CATEG", "POISSON"))
    p.add_argument("--linear-clip", type=float, default=10.0)
    p.add_argument("--target", default="y")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select", help="run the cross-validated selection")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", help="name=kind sidecar")
    p.add_argument("--truth", help="truth.json sidecar from simulate")
    p.add_argument("--target", required=True)
    p.add_argument("--group", help="group column; enables grouped folds")
    p.add_argument("--exclude", nargs="*", help="columns to leave out")
    p.add_argument("--no-refit", action="store_true")
    p.add_argument("--strict-vi-min", action="store_true")
    p.add_argument("--out", required=True)
    _strategy_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("predict", help="predict a CSV with a saved model bundle")
    p.add_argument("--model", required=True, help="bundle directory written by select")
    p.add_argument("--data", required=True)
    p.add_argument("--id-column")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="selection power and threshold against variable count")
    p.add_argument("--totals", type=int, nargs="+", required=True)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--out")
    _strategy_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("recode-quartiles", help="replace numeric columns by quartile classes")
    p.add_argument("--data", required=True)
    p.add_argument("--columns", nargs="*")
    p.add_argument("--out")
    p.set_defaults(func=cmd_recode_quartiles)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"forestsel: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except NotImplementedError as exc:
        print(f"forestsel: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (DataError, ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"forestsel: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
