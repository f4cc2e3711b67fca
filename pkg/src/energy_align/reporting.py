"""Run-directory writers: JSON reports, CSV tables, checkpoints and figures."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import plotting
from .aligning import ShiftVector, apply_shifts
from .model import save_checkpoint
from .numerics import LogitMatrix, neg_free_energies


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, NaN and inf to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(doc, path) -> None:
    text = json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def write_shifts(shifts: ShiftVector, path) -> None:
    shifts.save(path)


def write_traces(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "value"])
        for epoch, split, value in trace:
            w.writerow([epoch, split, repr(float(value))])


def write_confusion(matrix, path) -> None:
    cm = np.asarray(matrix, dtype=np.int64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true"] + [f"pred_{j}" for j in range(cm.shape[1])])
        for i, row in enumerate(cm):
            w.writerow([i] + row.tolist())


def write_energy_table(path, counts, nfe_before, nfe_after=None) -> None:
    counts = np.asarray(counts)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["class", "count", "neg_free_energy_before"]
        if nfe_after is not None:
            header.append("neg_free_energy_after")
        w.writerow(header)
        for c in range(counts.size):
            row = [c, int(counts[c]), repr(float(nfe_before[c]))]
            if nfe_after is not None:
                row.append(repr(float(nfe_after[c])))
            w.writerow(row)
    plotting.energy_per_class(Path(path).with_suffix(".png"), counts, nfe_before, nfe_after)


def _step_dir(out: Path, step: int) -> Path:
    d = out / f"step_{step}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_lt_run(out, config: dict, result) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(config, out / "config.json")
    step = _step_dir(out, 1)
    save_checkpoint(result.model, step / "checkpoint")
    write_shifts(result.shifts, step / "shifts.json")
    dump_json(result.report, out / "metrics.json")
    write_traces(result.trace, out / "traces.csv")
    write_energy_table(
        out / "energy_per_class.csv", result.report["train_counts"], result.nfe_before, result.nfe_after
    )
    write_confusion(result.confusion_after, out / "confusion.csv")
    write_confusion(result.confusion_before, out / "confusion_uncorrected.csv")
    plotting.confusion_pair(out / "confusion.png", result.confusion_before, result.confusion_after)


def write_cil_run(out, config: dict, result) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(config, out / "config.json")
    for s in result.steps:
        d = _step_dir(out, s.step)
        save_checkpoint(s.model, d / "checkpoint")
        shifts = s.shifts if s.shifts is not None else ShiftVector.zeros(s.model.class_count)
        write_shifts(shifts, d / "shifts.json")
    dump_json(result.report, out / "metrics.json")
    write_traces(result.trace, out / "traces.csv")
    last = result.steps[-1]
    if last.sample_logits is not None:
        before = neg_free_energies(last.sample_logits)
        after = neg_free_energies(LogitMatrix(apply_shifts(last.sample_logits.values, last.shifts)))
        write_energy_table(out / "energy_per_class.csv", last.train_counts, before, after)
    write_confusion(last.confusion_after, out / "confusion.csv")
    write_confusion(last.confusion_before, out / "confusion_uncorrected.csv")
    plotting.confusion_pair(out / "confusion.png", last.confusion_before, last.confusion_after)
    m = result.report["steps"]
    plotting.accuracy_per_step(
        out / "accuracy_per_step.png",
        [r["classes_seen"] for r in m],
        [r["top1_uncorrected"] for r in m],
        [r["top1_corrected"] for r in m],
    )
