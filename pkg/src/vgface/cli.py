"""Command-line surface: describe-model, extract, evaluate, selftest.

Exit codes are a stable scripting contract: 0 success, 1 usage or
configuration problem, 2 unreadable or inconsistent data, 3 internal error.
Data goes to files or stdout; progress and timing go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .descriptor import (DescriptorVariant, extract_from_file, parse_variant,
                         read_descriptor_matrix, write_descriptor_matrix)
from .errors import ConfigError, EngineError, FormatError, ShapeError, WeightError
from .evaluation import (DatasetManifest, FaceRecord, load_manifest_records,
                         run_experiment)
from .network import describe_layers, load_weights, read_container_header
from .similarity import DistanceKind
from .selftest import run_selftest
from .tensor import read_vgt

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

DEFAULT_CUTOFFS = (1, 5, 10)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we want 1
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="vgface",
                     description="Descriptor extraction and face-retrieval evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe-model", help="print the layer table of a container")
    p.add_argument("--model", required=True, help="path to a .vgfm container")

    p = sub.add_parser("extract", help="compute descriptors for manifest images")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--model", help="path to a .vgfm container")
    p.add_argument("--manifest", help="JSON manifest of images with subjects")
    p.add_argument("--variant", action="append",
                   help="descriptor variant name, repeatable (e.g. 35R, 35AR2)")
    p.add_argument("--output", help="directory for matrix + sidecar files")
    p.add_argument("--threads", type=int, help="worker count (default: all cores)")
    p.add_argument("--skip-errors", action="store_true", default=None,
                   help="log per-image failures instead of aborting")

    p = sub.add_parser("evaluate", help="run leave-one-out retrieval metrics")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--descriptors",
                   help="directory of extract output (sidecars carry subjects)")
    p.add_argument("--manifest", help="JSON manifest (paths or matrix row refs)")
    p.add_argument("--matrix", help=".vgt descriptor matrix for row-ref manifests")
    p.add_argument("--model", help=".vgfm container for inline extraction")
    p.add_argument("--variant", action="append", help="variant name, repeatable")
    p.add_argument("--distance", action="append",
                   help="distance name, repeatable (default: chisq)")
    p.add_argument("--cutoff", action="append", type=int,
                   help="retrieved-list cutoff, repeatable (default: 1 5 10)")
    p.add_argument("--anmrr-window", dest="anmrr_window",
                   help="'cutoff' (default), 'none', or a fixed integer window")
    p.add_argument("--output", help="report file (default: stdout)")
    p.add_argument("--format", dest="fmt", choices=("csv", "json"),
                   help="report format (default: csv)")
    p.add_argument("--pivot", action="store_true", default=None,
                   help="CSV with variants as columns")
    p.add_argument("--threads", type=int, help="worker count (default: all cores)")

    sub.add_parser("selftest", help="run the bundled invariant suite")
    return parser


def _load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return cfg


def _merged(args, key: str, default=None):
    """Flag value if given, else config value, else default."""
    value = getattr(args, key, None)
    if value in (None, []):
        cfg = getattr(args, "_config", {})
        value = cfg.get(key, cfg.get(key.replace("_", "-")))
    if value in (None, []):
        value = default
    return value


def _manifest_records(path):
    if not path:
        raise ConfigError("--manifest is required")
    return load_manifest_records(path)


def _threads(args) -> int:
    value = _merged(args, "threads", os.cpu_count() or 1)
    value = int(value)
    if value < 1:
        raise ConfigError(f"--threads must be >= 1, got {value}")
    return value


def cmd_describe_model(args) -> int:
    spec, _ = read_container_header(args.model)
    rows = describe_layers(spec)
    widths = [max(len(str(r[i])) for r in rows) for i in range(5)]
    header = ("no", "name", "kind", "filter", "volume")
    widths = [max(w, len(h)) for w, h in zip(widths, header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    print(fmt.format(*header))
    for row in rows:
        print(fmt.format(*row))
    return EXIT_OK


def cmd_extract(args) -> int:
    records = _manifest_records(_merged(args, "manifest"))
    if not records:
        raise ConfigError("manifest is empty: nothing to extract")
    if any(r.path is None for r in records):
        raise ConfigError("extraction needs 'path' entries in the manifest")
    variant_names = _merged(args, "variant")
    if not variant_names:
        raise ConfigError("at least one --variant is required")
    variants = [parse_variant(v) for v in variant_names]
    output = _merged(args, "output")
    if not output:
        raise ConfigError("--output directory is required")
    model = _merged(args, "model")
    if not model:
        raise ConfigError("--model is required")
    skip_errors = bool(_merged(args, "skip_errors", False))
    threads = _threads(args)
    spec, weights = load_weights(model)

    for variant in variants:
        t0 = time.perf_counter()
        descriptors, subjects, failures = _extract_variant(
            spec, weights, variant, records, threads, skip_errors)
        if failures and not skip_errors:
            path, err = failures[0]
            raise FormatError(f"{path}: {err}")
        if not descriptors:
            raise FormatError(f"variant {variant.name}: every image failed")
        write_descriptor_matrix(output, variant.name, descriptors, subjects)
        dt = time.perf_counter() - t0
        rate = len(descriptors) / dt if dt > 0 else float("inf")
        print(f"variant {variant.name}: {len(descriptors)} descriptors in "
              f"{dt:.2f}s ({rate:.1f} img/s), {len(failures)} failed",
              file=sys.stderr)
    return EXIT_OK


def _extract_variant(spec, weights, variant: DescriptorVariant, records,
                     threads: int, skip_errors: bool):
    def one(record):
        try:
            return extract_from_file(spec, weights, variant, record.path), None
        except (EngineError, OSError, ValueError) as e:
            return None, (record.path, str(e))

    if threads > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, records))
    else:
        outcomes = [one(r) for r in records]

    descriptors = []
    subjects = []
    failures = []
    for record, (desc, err) in zip(records, outcomes):
        if desc is not None:
            descriptors.append(desc)
            subjects.append(record.subject)
        else:
            failures.append(err)
            print(f"extract failed for {err[0]}: {err[1]}", file=sys.stderr)
    return descriptors, subjects, failures


def _evaluate_datasets(args):
    """Yield (variant label, manifest, matrix) for every descriptor set."""
    descriptors_dir = _merged(args, "descriptors")
    manifest_path = _merged(args, "manifest")
    matrix_path = _merged(args, "matrix")
    model = _merged(args, "model")
    variant_names = _merged(args, "variant")

    if descriptors_dir:
        sidecars = sorted(Path(descriptors_dir).glob("*.json"))
        if not sidecars:
            raise ConfigError(f"no descriptor sidecars found in {descriptors_dir}")
        for sidecar in sidecars:
            label, matrix, records = read_descriptor_matrix(sidecar)
            if any("subject" not in r for r in records):
                raise FormatError(f"{sidecar}: records lack subject labels")
            manifest = DatasetManifest(
                [FaceRecord(subject=str(r["subject"]), path=r.get("source"))
                 for r in records])
            yield label, manifest, matrix
        return

    records = _manifest_records(manifest_path)
    try:
        manifest = DatasetManifest(records)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    if matrix_path:
        matrix = read_vgt(matrix_path)
        if matrix.ndim != 2:
            raise FormatError(f"{matrix_path}: descriptor matrix must be 2-D")
        data = matrix.data
        if all(r.row is not None for r in records):
            rows = [r.row for r in records]
            if any(not 0 <= r < data.shape[0] for r in rows):
                raise FormatError(
                    f"{matrix_path}: manifest row reference out of range "
                    f"0..{data.shape[0] - 1}")
            data = data[rows]
        elif len(records) != data.shape[0]:
            raise ShapeError(
                f"{len(records)} manifest records but matrix has "
                f"{data.shape[0]} rows")
        label = variant_names[0] if variant_names else "precomputed"
        yield label, manifest, data
        return

    if not model:
        raise ConfigError(
            "evaluate needs --descriptors, --matrix, or --model for inline "
            "extraction")
    if not variant_names:
        raise ConfigError("inline extraction needs at least one --variant")
    if any(r.path is None for r in records):
        raise ConfigError("inline extraction needs 'path' manifest entries")
    spec, weights = load_weights(model)
    threads = _threads(args)
    for name in variant_names:
        variant = parse_variant(name)
        descriptors, subjects, failures = _extract_variant(
            spec, weights, variant, records, threads, skip_errors=False)
        if failures:
            path, err = failures[0]
            raise FormatError(f"{path}: {err}")
        matrix = np.stack([d.values.data for d in descriptors])
        yield name, manifest, matrix


def _parse_window(text):
    if text in (None, "", "cutoff"):
        return "cutoff"
    if text == "none":
        return None
    try:
        return int(text)
    except ValueError:
        raise ConfigError(
            f"--anmrr-window must be 'cutoff', 'none' or an integer, got {text!r}"
        ) from None


def cmd_evaluate(args) -> int:
    distances = [DistanceKind.parse(d)
                 for d in (_merged(args, "distance") or ["chisq"])]
    cutoffs = tuple(_merged(args, "cutoff") or DEFAULT_CUTOFFS)
    if any(c < 1 for c in cutoffs):
        raise ConfigError(f"cutoffs must be positive, got {cutoffs}")
    window = _parse_window(_merged(args, "anmrr_window"))
    threads = _threads(args)
    fmt = _merged(args, "fmt", "csv")
    pivot = bool(_merged(args, "pivot", False))
    if pivot and fmt != "csv":
        raise ConfigError("--pivot is only available with --format csv")

    reports = []
    for label, manifest, matrix in _evaluate_datasets(args):
        for kind in distances:
            try:
                reports.append(run_experiment(
                    manifest, matrix, kind, cutoffs=cutoffs,
                    anmrr_window=window, threads=threads, variant_label=label))
            except ValueError as e:
                raise ConfigError(str(e)) from None

    text = _render_json(reports) if fmt == "json" else _render_csv(reports, pivot)
    output = _merged(args, "output")
    if output:
        Path(output).write_text(text)
        print(f"wrote {output}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _render_csv(reports, pivot: bool) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if not pivot:
        writer.writerow(("variant", "distance", "cutoff",
                         "arp_pct", "arr_pct", "f_pct", "anmrr_pct"))
        for r in reports:
            for m in r.cutoffs:
                writer.writerow((r.variant, r.distance, m,
                                 f"{100 * r.arp[m]:.2f}", f"{100 * r.arr[m]:.2f}",
                                 f"{100 * r.f[m]:.2f}", f"{100 * r.anmrr[m]:.2f}"))
        return buf.getvalue()

    variants = []
    for r in reports:
        if r.variant not in variants:
            variants.append(r.variant)
    writer.writerow(["metric", "distance", "cutoff"] + variants)
    cells = {}
    keys = []
    for r in reports:
        for m in r.cutoffs:
            for metric, table in (("arp_pct", r.arp), ("arr_pct", r.arr),
                                  ("f_pct", r.f), ("anmrr_pct", r.anmrr)):
                key = (metric, r.distance, m)
                if key not in cells:
                    cells[key] = {}
                    keys.append(key)
                cells[key][r.variant] = f"{100 * table[m]:.2f}"
    for key in keys:
        metric, dist, m = key
        writer.writerow([metric, dist, m] +
                        [cells[key].get(v, "") for v in variants])
    return buf.getvalue()


def _render_json(reports) -> str:
    return json.dumps([r.to_json_dict() for r in reports], indent=2) + "\n"


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE

    try:
        if getattr(args, "config", None):
            args._config = _load_config(args.config)
        else:
            args._config = {}
        if args.command == "describe-model":
            return cmd_describe_model(args)
        if args.command == "extract":
            return cmd_extract(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "selftest":
            return run_selftest()
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ShapeError, WeightError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except EngineError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as e:  # noqa: BLE001 - last-resort mapping to exit code
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
