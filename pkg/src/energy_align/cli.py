"""Command-line entry point: ``energy-align <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import metrics
from .aligning import ClusterAssignment, ShiftVector, apply_shifts, cluster_shifts, jenks_breaks, select_num_clusters
from .data import LabeledDataset, load_csv_dataset, load_int_list, load_logit_file
from .errors import ConfigError, ContractError, ParseError
from .harness import cil_datasets, lt_datasets, run_cil, run_lt
from .numerics import LogitMatrix, neg_free_energies
from .reporting import dump_json, write_cil_run, write_energy_table, write_lt_run
from .training import DivergenceError

log = logging.getLogger("energy_align")

AUTO_CANDIDATES = (1, 2, 3, 4, 5)


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = cfgmod.parse_value(value)
    return out


def _datasets(mode: str, resolved: dict, synth):
    train_csv, test_csv = resolved.get("train_csv"), resolved.get("test_csv")
    if bool(train_csv) != bool(test_csv):
        raise ConfigError("train_csv and test_csv must be given together")
    if train_csv:
        train_set = load_csv_dataset(train_csv)
        test_set = load_csv_dataset(test_csv, train_set.num_classes)
        test_set = LabeledDataset(test_set.features, test_set.labels, test_set.num_classes, "test")
        if train_set.dim != test_set.dim:
            raise ConfigError("train and test CSVs have different feature counts")
        return train_set, test_set
    return lt_datasets(synth) if mode == "train-lt" else cil_datasets(synth)


def cmd_train(args) -> int:
    doc = cfgmod.load_config_file(args.config) if args.config else {}
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    resolved = cfgmod.resolve(args.command, doc, overrides)
    parts = cfgmod.build(resolved)
    train_set, test_set = _datasets(args.command, resolved, parts["synth"])
    if args.command == "train-lt":
        result = run_lt(train_set, test_set, parts["sgd"], parts["model"], parts["ea"])
        write_lt_run(args.out, resolved, result)
        c = result.report["corrected"]
        u = result.report["uncorrected"]
        print(
            f"train-lt: M={result.report['num_clusters']} macro {u['macro']:.2f} -> {c['macro']:.2f}"
            f" spearman {result.report['spearman_before']:.3f} -> {result.report['spearman_after']:.3f}"
        )
    else:
        result = run_cil(
            train_set, test_set, parts["cil"], parts["sgd"], parts["model"], parts["ea"], resolved["class_seed"]
        )
        write_cil_run(args.out, resolved, result)
        r = result.report
        avg = "n/a" if r["avg"] is None else f"{r['avg']:.2f}"
        raw = "n/a" if r["avg_uncorrected"] is None else f"{r['avg_uncorrected']:.2f}"
        print(f"train-cil: avg {avg} (uncorrected {raw})")
    print(f"wrote {args.out}")
    return 0


def _load_counts(path, class_count: int) -> np.ndarray:
    counts = load_int_list(path)
    if counts.size != class_count:
        raise ContractError(f"{path}: {counts.size} counts for {class_count} logit columns")
    if counts.min() < 0:
        raise ContractError(f"{path}: negative count")
    return counts


def _resolve_anchor(spec: str, clusters: ClusterAssignment) -> ClusterAssignment:
    """``few`` keeps the least frequent cluster; an integer names a class whose cluster anchors."""
    if spec == "few":
        return clusters
    try:
        cls = int(spec)
    except ValueError as exc:
        raise ConfigError(f"--anchor must be 'few' or a class index, got {spec!r}") from exc
    if not 0 <= cls < clusters.cluster_of.size:
        raise ContractError(f"anchor class {cls} out of range [0, {clusters.cluster_of.size})")
    return ClusterAssignment(clusters.cluster_of, anchor_cluster=int(clusters.cluster_of[cls]))


def cmd_align(args) -> int:
    logits = load_logit_file(args.logits)
    counts = _load_counts(args.counts, logits.class_count)
    distinct = np.unique(counts).size
    if args.clusters == "auto":
        feasible = [m for m in AUTO_CANDIDATES if m <= distinct]
        m = select_num_clusters(feasible, logits, counts)
    else:
        try:
            m = int(args.clusters)
        except ValueError as exc:
            raise ConfigError(f"--clusters must be an integer or 'auto', got {args.clusters!r}") from exc
    clusters = _resolve_anchor(args.anchor, jenks_breaks(counts, m))
    shifts = cluster_shifts(logits, clusters)
    shifts.save(args.out)
    print(f"align: M={m} anchor cluster {clusters.anchor_cluster}; wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    logits = load_logit_file(args.logits)
    labels = logits.labels
    if args.labels:
        labels = load_int_list(args.labels)
    if labels is None:
        raise ConfigError("labels needed: pass --labels or a logit file with a label block")
    if labels.size != logits.sample_count:
        raise ContractError(f"{labels.size} labels for {logits.sample_count} logit rows")
    if labels.min() < 0 or labels.max() >= logits.class_count:
        raise ContractError("label out of range")
    values = logits.values
    if args.shifts:
        values = apply_shifts(values, ShiftVector.load(args.shifts))
    counts = _load_counts(args.counts, logits.class_count) if args.counts else None
    report = metrics.evaluate(values, labels, logits.class_count, counts)
    dump_json(report, args.out)
    print(f"eval: top1 {report['top1']:.2f} macro {report['macro']:.2f}; wrote {args.out}")
    return 0


def cmd_diagnose(args) -> int:
    logits = load_logit_file(args.logits)
    counts = _load_counts(args.counts, logits.class_count)
    before = neg_free_energies(logits)
    after = None
    if args.shifts:
        after = neg_free_energies(LogitMatrix(apply_shifts(logits.values, ShiftVector.load(args.shifts))))
    write_energy_table(args.out, counts, before, after)
    diag = metrics.energy_bias_diagnostic(counts, before, after)
    line = f"diagnose: spearman(count, -E) {diag['spearman_before']:.3f}"
    if after is not None:
        line += f" -> {diag['spearman_after']:.3f}"
    print(f"{line}; wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="energy-align", description="Post-hoc logit shifts from class free energies.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    for name, text in (("train-lt", "long-tailed training + correction"), ("train-cil", "class-incremental run")):
        t = sub.add_parser(name, help=text)
        t.add_argument("--config", help="flat JSON config; missing keys take defaults")
        t.add_argument("--out", required=True, help="run directory")
        t.add_argument("--seed", type=int, help="overrides the config seed")
        t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        t.set_defaults(func=cmd_train)

    a = sub.add_parser("align", help="shift scalars for external logits")
    a.add_argument("--logits", required=True, help="EALG logit file of the sampling set")
    a.add_argument("--counts", required=True, help="per-class training counts")
    a.add_argument("--clusters", default="auto", help="number of clusters, or 'auto'")
    a.add_argument("--anchor", default="few", help="'few' or a class index")
    a.add_argument("--out", required=True, help="shifts.json to write")
    a.set_defaults(func=cmd_align)

    e = sub.add_parser("eval", help="accuracy report for a logit file")
    e.add_argument("--logits", required=True)
    e.add_argument("--labels", help="labels file; defaults to the logit file's label block")
    e.add_argument("--shifts", help="shifts.json to add before scoring")
    e.add_argument("--counts", help="training counts, enables shot splits")
    e.add_argument("--out", required=True, help="metrics.json to write")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", help="per-class negative free energy table and figure")
    d.add_argument("--logits", required=True)
    d.add_argument("--counts", required=True)
    d.add_argument("--shifts", help="also tabulate energies after this correction")
    d.add_argument("--out", required=True, help="CSV to write; a PNG is written alongside")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        if args.command not in ("train-lt", "train-cil"):
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (ContractError, ConfigError, ParseError, DivergenceError, OSError) as exc:
        print(f"energy-align {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
