"""scikit-learn wrapper around the training loop.

``TriAdaptRegressor`` adapts a frozen MLP to ``(X, y)`` and then behaves
like any other regressor: ``fit``/``predict``/``score``, ``get_params`` and
``set_params``, cloning, pipelines and grid search all work.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .linalg import RngState
from .trainer import SyntheticTask, TrainConfig, build_model, make_base_weights, run_training, site_shapes

__all__ = ["TriAdaptRegressor"]


class TriAdaptRegressor(RegressorMixin, BaseEstimator):
    """Fine-tune a frozen MLP with triangular-split adapters.

    Parameters
    ----------
    base_weights : dict or None, default=None
        ``{site_id: (rows, cols) array}`` in forward order, e.g. the
        ``"00.W"``, ``"01.W"``, ... layers of a pre-trained MLP. When None a
        random base of ``n_layers`` layers is drawn from ``base_seed``.
    n_layers, hidden_dim : int
        Shape of the random base; ignored when ``base_weights`` is given.
    method : {"triadapt", "lora", "full", "frozen"}, default="triadapt"
        ``lora`` keeps a fixed rank ``lora_rank`` with ``D = I``.
    mode : {"linear", "nonlinear", "fixed_k"}, default="linear"
        Rule for the number of sites that grow at each update.
    total_steps, warmup_steps, incre_interval : int
        Optimiser steps, steps before the first growth, steps between
        growth evaluations.
    r_ref, delta_r, k_fixed : int
        Reference rank per site (budget is ``r_ref * n_sites``), rank
        added per growth, and ``k`` for ``fixed_k`` mode.
    random_state : int, default=0
        Seeds adapter initialisation, growth and minibatch order.

    Attributes
    ----------
    model_ : ToyModel
    record_ : RunRecord
    ranks_ : dict
        Final rank per site.
    n_features_in_ : int
    """

    def __init__(
        self,
        base_weights=None,
        n_layers=2,
        hidden_dim=None,
        base_seed=1000,
        method="triadapt",
        mode="linear",
        total_steps=500,
        warmup_steps=50,
        incre_interval=50,
        r_ref=4,
        delta_r=1,
        k_fixed=1,
        learning_rate=0.02,
        weight_decay=0.0,
        batch_size=32,
        optimizer="adamw",
        alpha=16.0,
        orth_coefficient=0.01,
        orth_enabled=True,
        norm_variant="by_rank",
        init_policy="gaussian",
        lora_rank=4,
        random_state=0,
    ):
        self.base_weights = base_weights
        self.n_layers = n_layers
        self.hidden_dim = hidden_dim
        self.base_seed = base_seed
        self.method = method
        self.mode = mode
        self.total_steps = total_steps
        self.warmup_steps = warmup_steps
        self.incre_interval = incre_interval
        self.r_ref = r_ref
        self.delta_r = delta_r
        self.k_fixed = k_fixed
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.alpha = alpha
        self.orth_coefficient = orth_coefficient
        self.orth_enabled = orth_enabled
        self.norm_variant = norm_variant
        self.init_policy = init_policy
        self.lora_rank = lora_rank
        self.random_state = random_state

    def _base(self, n_in, n_out):
        if self.base_weights is not None:
            base = {k: np.asarray(v, dtype=np.float64) for k, v in self.base_weights.items()}
            first, last = next(iter(base.values())), list(base.values())[-1]
            if first.shape[1] != n_in or last.shape[0] != n_out:
                raise ValueError(
                    f"base_weights map {first.shape[1]} -> {last.shape[0]} features, "
                    f"data has {n_in} -> {n_out}"
                )
            return base
        hidden = self.hidden_dim or max(n_in, n_out)
        shapes = site_shapes("mlp", hidden, hidden, self.n_layers, in_dim=n_in, out_dim=n_out)
        return make_base_weights(shapes, RngState(self.base_seed))

    def _train_config(self):
        return TrainConfig(
            method=self.method, optimizer=self.optimizer, learning_rate=self.learning_rate,
            weight_decay=self.weight_decay, batch_size=self.batch_size,
            total_steps=self.total_steps, orth_coefficient=self.orth_coefficient,
            orth_enabled=self.orth_enabled, norm_variant=self.norm_variant,
            init_policy=self.init_policy, alpha=self.alpha, lora_rank=self.lora_rank,
            mode=self.mode, warmup_steps=self.warmup_steps, incre_interval=self.incre_interval,
            k_fixed=self.k_fixed, r_ref=self.r_ref, delta_r=self.delta_r, seed=self.random_state,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self._y_1d = y.ndim == 1
        Y = y.reshape(-1, 1) if self._y_1d else y
        cfg = self._train_config()
        base = self._base(X.shape[1], Y.shape[1])
        self.model_ = build_model(
            "mlp", base, cfg.method, n_layers=len(base), alpha=cfg.alpha,
            lora_rank=cfg.lora_rank, rng=RngState(cfg.seed),
        )
        task = SyntheticTask("regression", X, Y, X, Y, teacher_weights={})
        self.record_ = run_training(self.model_, task, cfg, keep_checkpoints=False)
        self.ranks_ = {row["site_id"]: row["rank"] for row in self.record_.final_ranks}
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        Y, _ = self.model_.forward(X)
        return Y[:, 0] if self._y_1d else Y
