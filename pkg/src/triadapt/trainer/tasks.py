"""Synthetic fine-tuning tasks with a planted low-rank teacher.

The teacher is the base network with a rank-``teacher_rank`` perturbation
added to selected weight matrices. Regression targets are the teacher's
outputs plus Gaussian noise; classification labels are the teacher's argmax
(tokens are mean-pooled for the attention topology).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError
from ..linalg import RngState, gaussian_matrix
from .models import build_model

__all__ = ["SyntheticTask", "make_task", "planted_deltas", "task_logits"]


@dataclass
class SyntheticTask:
    kind: str
    X_train: np.ndarray
    y_train: np.ndarray
    X_eval: np.ndarray
    y_eval: np.ndarray
    teacher_weights: dict
    noise_std: float = 0.0
    seed: int = 0

    @property
    def n_train(self):
        return self.X_train.shape[0]


def planted_deltas(shapes, rank, scale, sites, rng: RngState):
    """Rank-``rank`` perturbations ``scale * P Q^T / sqrt(rank * cols)``."""
    out = {}
    for sid, (rows, cols) in shapes:
        if sites != "all" and sid not in sites:
            continue
        k = min(rank, rows, cols)
        P = gaussian_matrix(rows, k, 1.0, rng)
        Q = gaussian_matrix(cols, k, 1.0, rng)
        out[sid] = scale * (P @ Q.T) / np.sqrt(k * cols)
    return out


def task_logits(model, Y):
    return Y.mean(axis=1) if model.topology == "attention_block" else Y


def make_task(
    topology,
    base_weights: dict,
    *,
    kind="regression",
    n_layers=1,
    teacher_rank=4,
    teacher_scale=1.0,
    teacher_sites="all",
    n_train=256,
    n_eval=256,
    noise_std=0.05,
    seq_len=4,
    seed=0,
):
    if kind not in ("regression", "classification"):
        raise ConfigurationError(f"unknown task kind {kind!r}")
    rng = RngState(seed)
    shapes = [(sid, W.shape) for sid, W in base_weights.items()]
    deltas = planted_deltas(shapes, teacher_rank, teacher_scale, teacher_sites, rng)
    teacher_weights = {sid: W + deltas.get(sid, 0.0) for sid, W in base_weights.items()}
    teacher = build_model(topology, teacher_weights, "frozen", n_layers=n_layers)

    n_total = n_train + n_eval
    if topology == "attention_block":
        X = rng.standard_normal((n_total, seq_len, teacher.dim))
    else:
        X = rng.standard_normal((n_total, teacher.input_dim))
    Y, _ = teacher.forward(X)
    if kind == "regression":
        y = Y + noise_std * rng.standard_normal(Y.shape)
    else:
        y = np.argmax(task_logits(teacher, Y), axis=-1)
    order = rng.permutation(n_total)
    tr, ev = order[:n_train], order[n_train:]
    return SyntheticTask(
        kind=kind,
        X_train=X[tr],
        y_train=y[tr],
        X_eval=X[ev],
        y_eval=y[ev],
        teacher_weights=teacher_weights,
        noise_std=noise_std,
        seed=seed,
    )
