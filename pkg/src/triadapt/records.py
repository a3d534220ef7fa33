"""On-disk layout of a run record.

One directory per run::

    record.json          config echo, run id, budget, growth events,
                         final rank table, eval losses, counters
    metrics.tsv          t, loss, lr, R_t per training step
    scores.tsv           t, site_id, rank, prev_rank, norm, prev_norm, score
    checkpoints/         step_000000.json, step_<t>.json, final.json
    timing.json          wall-clock seconds (not part of the record proper)

Floats are written with ``repr`` so every file round-trips bit for bit.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

from .trainer.loop import RunRecord

__all__ = ["write_record", "load_record", "resolve_record_dir", "RECORD_FILES"]

RECORD_FILES = ("record.json", "metrics.tsv", "scores.tsv")
METRIC_FIELDS = ("t", "loss", "lr", "R_t")
SCORE_FIELDS = ("t", "site_id", "rank", "prev_rank", "norm", "prev_norm", "score")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_tsv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row[k]) for k in header) + "\n")


def _ckpt_name(key):
    return "final.json" if key == "final" else f"step_{int(key):06d}.json"


def write_record(record: RunRecord, directory) -> Path:
    directory = Path(directory)
    (directory / "checkpoints").mkdir(parents=True, exist_ok=True)
    meta = {
        "run_id": record.run_id,
        "seed": record.seed,
        "status": record.status,
        "error": record.error,
        "config": record.config,
        "budget": record.budget,
        "growth_events": record.growth_events,
        "final_ranks": record.final_ranks,
        "eval_loss": record.eval_loss,
        "counters": record.counters,
        "checkpoints": [_ckpt_name(k) for k in record.checkpoints],
    }
    with open(directory / "record.json", "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    _write_tsv(directory / "metrics.tsv", METRIC_FIELDS, record.steps)
    _write_tsv(directory / "scores.tsv", SCORE_FIELDS, record.score_rows)
    for key, sites in record.checkpoints.items():
        t = None if key == "final" else int(key)
        with open(directory / "checkpoints" / _ckpt_name(key), "w") as fh:
            json.dump({"t": t, "sites": sites}, fh)
    with open(directory / "timing.json", "w") as fh:
        json.dump({"wall_clock_seconds": record.wall_clock}, fh)
    return directory


def resolve_record_dir(path) -> Path:
    path = Path(path)
    if path.is_file() and path.name == "record.json":
        path = path.parent
    if not (path / "record.json").is_file():
        raise FileNotFoundError(f"no run record at {path}")
    return path


def _parse(value):
    if value == "":
        return None
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _read_tsv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        return [{k: _parse(v) for k, v in row.items()} for row in reader]


def load_record(path) -> RunRecord:
    """Read a record directory (or its ``record.json``) back into memory."""
    directory = resolve_record_dir(path)
    with open(directory / "record.json") as fh:
        meta = json.load(fh)
    steps = _read_tsv(directory / "metrics.tsv")
    score_rows = _read_tsv(directory / "scores.tsv")
    for row in score_rows:
        row["site_id"] = str(row["site_id"])
    checkpoints = {}
    for name in meta.get("checkpoints", []):
        fname = directory / "checkpoints" / name
        if not os.path.exists(fname):
            continue
        with open(fname) as fh:
            blob = json.load(fh)
        key = "final" if blob["t"] is None else int(blob["t"])
        checkpoints[key] = blob["sites"]
    return RunRecord(
        config=meta["config"],
        run_id=meta["run_id"],
        seed=meta["seed"],
        status=meta["status"],
        error=meta.get("error"),
        steps=steps,
        growth_events=meta["growth_events"],
        score_rows=score_rows,
        checkpoints=checkpoints,
        final_ranks=meta["final_ranks"],
        budget=meta.get("budget"),
        eval_loss=meta.get("eval_loss", {}),
        counters=meta.get("counters", {}),
    )
