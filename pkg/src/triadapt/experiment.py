"""Config-driven runs, multi-seed summaries and rank-table export."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .linalg import RngState
from .records import load_record, resolve_record_dir, write_record
from .trainer import ROLES, build_model, make_base_weights, make_task, run_training, site_shapes

__all__ = ["build_run", "run_seed", "run_experiment", "summarize", "rank_table", "export_rank_table"]

log = logging.getLogger(__name__)


def build_run(cfg: ExperimentConfig, seed: int, method=None):
    """Model, task and train config for one seed.

    The base weights and the task depend only on ``model.base_seed`` and
    ``task.seed``; ``seed`` drives adapter initialisation, growth and
    minibatch order.
    """
    m, tk = cfg.model, cfg.task
    shapes = site_shapes(m.topology, m.dim, m.hidden_dim, m.n_layers)
    base = make_base_weights(shapes, RngState(m.base_seed), gain=m.base_gain)
    task = make_task(
        m.topology, base, kind=tk.kind, n_layers=m.n_layers,
        teacher_rank=tk.teacher_rank, teacher_scale=tk.teacher_scale,
        teacher_sites=tk.teacher_sites, n_train=tk.n_train, n_eval=tk.n_eval,
        noise_std=tk.noise_std, seq_len=tk.seq_len, seed=tk.seed,
    )
    tcfg = cfg.train_config(seed)
    if method is not None:
        tcfg.method = method
    model = build_model(
        m.topology, base, tcfg.method, n_layers=m.n_layers, dim=m.dim,
        hidden_dim=m.hidden_dim, alpha=tcfg.alpha, epsilon=tcfg.epsilon,
        init_std=tcfg.init_std, lora_rank=tcfg.lora_rank,
        dropout=tcfg.lora_dropout, rng=RngState(seed),
    )
    return model, task, tcfg


def run_seed(cfg: ExperimentConfig, seed: int, keep_checkpoints=True):
    model, task, tcfg = build_run(cfg, seed)
    return run_training(model, task, tcfg, config_echo=cfg.echo(seed), keep_checkpoints=keep_checkpoints)


def summarize(records) -> dict:
    """Mean and population std over seeds of the headline metrics."""
    metrics = {
        "initial_eval_loss": [r.eval_loss.get("initial") for r in records],
        "final_eval_loss": [r.eval_loss.get("final") for r in records],
        "final_train_loss": [r.steps[-1]["loss"] if r.steps else None for r in records],
        "total_rank": [sum(row["rank"] for row in r.final_ranks) for r in records],
        "growth_events": [len(r.growth_events) for r in records],
    }
    out = {"seeds": [r.seed for r in records], "run_ids": [r.run_id for r in records], "metrics": {}}
    for name, values in metrics.items():
        vals = [v for v in values if v is not None]
        if not vals:
            continue
        arr = np.array(vals, dtype=np.float64)
        out["metrics"][name] = {"mean": float(arr.mean()), "std": float(arr.std()), "values": [float(v) for v in vals]}
    return out


def run_experiment(cfg: ExperimentConfig, output_dir=None):
    """Run every seed, write one record directory each plus ``summary.json``.

    A numerical failure still writes the partial record for that seed and
    is re-raised after the summary of completed seeds is written.
    """
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, failure = [], None
    for seed in cfg.seeds:
        log.info("seed %d: training", seed)
        try:
            rec = run_seed(cfg, seed)
        except FloatingPointError as exc:
            rec = getattr(exc, "record", None)
            failure = exc
            if rec is not None:
                write_record(rec, out / f"seed_{seed}")
            break
        write_record(rec, out / f"seed_{seed}")
        records.append(rec)
    with open(out / "summary.json", "w") as fh:
        json.dump(summarize(records), fh, indent=1)
        fh.write("\n")
    if failure is not None:
        raise failure
    return records


def rank_table(final_ranks):
    """Wide table: one row per layer, one column per role."""
    roles_present = {row["role"] for row in final_ranks}
    roles = [r for r in ROLES if r in roles_present] + sorted(roles_present - set(ROLES))
    layers = sorted({row["layer"] for row in final_ranks})
    cells = {(row["layer"], row["role"]): row["rank"] for row in final_ranks}
    return layers, roles, cells


def export_rank_table(record_path, out_dir=None):
    """Write ``rank_table.tsv`` (wide) and ``rank_table_long.tsv``; return both paths."""
    directory = resolve_record_dir(record_path)
    rec = load_record(directory)
    out_dir = Path(out_dir) if out_dir else directory
    layers, roles, cells = rank_table(rec.final_ranks)
    wide = out_dir / "rank_table.tsv"
    with open(wide, "w") as fh:
        fh.write("\t".join(["layer"] + roles) + "\n")
        for layer in layers:
            fh.write("\t".join([str(layer)] + [str(cells.get((layer, r), "")) for r in roles]) + "\n")
    long = out_dir / "rank_table_long.tsv"
    with open(long, "w") as fh:
        fh.write("layer\trole\tsite_id\trank\n")
        for row in rec.final_ranks:
            fh.write(f"{row['layer']}\t{row['role']}\t{row['site_id']}\t{row['rank']}\n")
    return wide, long
