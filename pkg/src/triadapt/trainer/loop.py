"""Training loop: gradient steps interleaved with periodic rank growth."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..adapter import INIT_POLICIES, orth_grads, orth_penalty, state_to_dict
from ..exceptions import ConfigurationError, NumericalError
from ..importance import FlopCounter, NormVariant, ScoreBoard, evaluate_all
from ..linalg import RngState
from ..scheduler import BudgetState, RankScheduler, ScheduleConfig
from .models import METHODS, ToyModel
from .optim import linear_decay, make_optimizer
from .tasks import SyntheticTask, task_logits

__all__ = [
    "TrainConfig",
    "RunRecord",
    "task_loss",
    "loss_and_grads",
    "lora_baseline_step",
    "evaluate",
    "run_training",
]

GROWTH_STREAM = 0xA5A50000
BATCH_STREAM = 0x5A5A0000


@dataclass
class TrainConfig:
    """Hyperparameters of one run.

    ``warmup_steps``, ``incre_interval`` and ``k_fixed`` feed the growth
    schedule together with ``total_steps``; ``r_ref`` and ``delta_r`` size
    the rank budget and the per-event increment.
    """

    method: str = "triadapt"
    optimizer: str = "adamw"
    learning_rate: float = 0.02
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    total_steps: int = 2000
    lr_schedule: str = "linear"
    orth_coefficient: float = 0.01
    orth_enabled: bool = True
    norm_variant: str = "by_rank"
    init_policy: str = "gaussian"
    alpha: float = 16.0
    epsilon: float = 1e-6
    init_std: float = 0.02
    lora_rank: int = 4
    lora_dropout: float = 0.0
    mode: str = "linear"
    warmup_steps: int = 100
    incre_interval: int = 100
    k_fixed: int = 1
    r_ref: int = 4
    delta_r: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.init_policy not in INIT_POLICIES:
            raise ConfigurationError(f"init_policy must be one of {INIT_POLICIES}")
        if self.lr_schedule not in ("linear", "constant"):
            raise ConfigurationError("lr_schedule must be 'linear' or 'constant'")
        NormVariant.parse(self.norm_variant)
        for name in ("learning_rate", "alpha", "init_std"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("batch_size", "total_steps", "incre_interval", "k_fixed", "delta_r", "lora_rank"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for name in ("weight_decay", "orth_coefficient", "epsilon", "warmup_steps", "r_ref"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if not 0.0 <= self.lora_dropout < 1.0:
            raise ConfigurationError("lora_dropout must lie in [0, 1)")
        if self.mode not in ("linear", "nonlinear", "fixed_k"):
            raise ConfigurationError(f"unknown threshold mode {self.mode!r}")

    def schedule_config(self):
        """``ScheduleConfig`` for this run, or None if warm-up covers it."""
        if self.warmup_steps >= self.total_steps:
            return None
        return ScheduleConfig(
            mode=self.mode,
            t0=self.warmup_steps,
            T=self.total_steps,
            k_fixed=self.k_fixed,
            incre_interval=self.incre_interval,
        )


@dataclass
class RunRecord:
    config: dict
    run_id: str
    seed: int
    status: str = "running"
    error: dict = None
    steps: list = field(default_factory=list)
    growth_events: list = field(default_factory=list)
    score_rows: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    final_ranks: list = field(default_factory=list)
    budget: dict = None
    eval_loss: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    wall_clock: float = 0.0  # excluded from persisted equality


def run_id_for(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(blob).hexdigest()


def task_loss(model: ToyModel, Y, y, kind):
    """Task loss and its gradient with respect to the model output ``Y``."""
    if kind == "regression":
        diff = Y - y
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    logits = task_logits(model, Y)
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    N = logits.shape[0]
    labels = np.asarray(y, dtype=int)
    loss = -float(np.mean(logp[np.arange(N), labels]))
    dlogits = np.exp(logp)
    dlogits[np.arange(N), labels] -= 1.0
    dlogits /= N
    if model.topology == "attention_block":
        seq = Y.shape[1]
        return loss, np.repeat(dlogits[:, None, :] / seq, seq, axis=1)
    return loss, dlogits


def _first_bad_site(model):
    for site in model.trainable_sites:
        for p in site.params().values():
            if not np.all(np.isfinite(p)):
                return site.site_id
    return None


def loss_and_grads(model: ToyModel, batch, config: TrainConfig, kind="regression", step=None, train=False):
    """Mean task loss plus the weighted orthogonality penalty, and gradients.

    Gradients are returned as ``{site_id: {param_name: array}}`` and cover
    trainable parameters only; triangular masks are already applied.
    """
    X, y = batch
    if len(X) == 0:
        raise ConfigurationError("empty batch")
    Y, cache = model.forward(X, train=train)
    loss, dY = task_loss(model, Y, y, kind)
    grads, _ = model.backward(cache, dY)
    if config.orth_enabled and config.orth_coefficient > 0:
        c = config.orth_coefficient
        for site in model.adapter_sites:
            loss += c * orth_penalty(site.state)
            gA, gB = orth_grads(site.state)
            g = grads[site.site_id]
            g["A"] = g["A"] + c * gA
            g["B"] = g["B"] + c * gB
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss at step {step}", step=step, site_id=_first_bad_site(model))
    return loss, grads


def lora_baseline_step(model: ToyModel, batch, config: TrainConfig, kind="regression", step=None):
    """``loss_and_grads`` for a model built with ``method="lora"``."""
    if model.method != "lora":
        raise ConfigurationError("lora_baseline_step needs a model built with method='lora'")
    return loss_and_grads(model, batch, config, kind, step)


def evaluate(model: ToyModel, X, y, kind="regression") -> float:
    Y, _ = model.forward(X)
    return task_loss(model, Y, y, kind)[0]


def _snapshot(model):
    return [state_to_dict(s.state) for s in model.adapter_sites]


def run_training(
    model: ToyModel,
    task: SyntheticTask,
    config: TrainConfig,
    config_echo: dict = None,
    keep_checkpoints=True,
) -> RunRecord:
    """Train ``model`` on ``task`` for ``config.total_steps`` steps.

    At every update boundary after warm-up, while the budget is positive,
    all sites are scored, ``k`` is drawn from the threshold rule, the top-k
    sites grow by ``delta_r`` and the budget is charged. Every step then
    takes one optimiser step on a minibatch.

    On a numerical failure the partially filled record is attached to the
    raised ``NumericalError`` as ``.record``.
    """
    echo = config_echo if config_echo is not None else {"train": asdict(config)}
    record = RunRecord(config=echo, run_id=run_id_for(echo), seed=config.seed)
    started = time.perf_counter()
    try:
        _train(model, task, config, record, keep_checkpoints)
        record.status = "ok"
    except NumericalError as exc:
        record.status = "failed"
        record.error = {"type": "numerical", "message": str(exc), "step": exc.step, "site_id": exc.site_id}
        record.final_ranks = model.rank_table()
        exc.record = record
        raise
    finally:
        record.wall_clock = time.perf_counter() - started
    return record


def _train(model, task, config, record, keep_checkpoints):
    T = config.total_steps
    growth_rng = RngState(config.seed ^ GROWTH_STREAM)
    batch_rng = RngState(config.seed ^ BATCH_STREAM)
    optimizer = make_optimizer(config.optimizer, config.weight_decay, config.beta1, config.beta2)
    sites = model.trainable_sites
    adapters = [s.state for s in model.adapter_sites]

    scheduler = None
    if config.method == "triadapt" and adapters:
        budget = BudgetState(r_ref=config.r_ref, M=len(adapters), r_init=1, delta_r=config.delta_r)
        record.budget = {"R_0": budget.R_0, "r_ref": config.r_ref, "M": budget.M, "r_init": 1, "delta_r": config.delta_r}
        sched_cfg = config.schedule_config()
        if sched_cfg is not None:
            scheduler = RankScheduler(sched_cfg, budget)
    board = ScoreBoard(config.norm_variant)
    flops = FlopCounter()
    n_evals = 0

    if keep_checkpoints and adapters:
        record.checkpoints[0] = _snapshot(model)
    record.eval_loss["initial"] = evaluate(model, task.X_eval, task.y_eval, task.kind)

    n = task.n_train
    bs = min(config.batch_size, n)
    order = batch_rng.permutation(n)
    cursor = 0
    for t in range(1, T + 1):
        if scheduler is not None and scheduler.is_boundary(t) and scheduler.gate_open():
            if keep_checkpoints:
                record.checkpoints[t] = _snapshot(model)
            scores = evaluate_all(board, adapters, t, counter=flops)
            n_evals += 1
            for st in adapters:
                e = board.entries[st.site_id]
                record.score_rows.append({
                    "t": t, "site_id": st.site_id, "rank": e.rank, "prev_rank": e.prev_rank,
                    "norm": e.norm, "prev_norm": e.prev_norm, "score": e.score,
                })
            eligible = [sid for sid in sorted(scores) if model.can_grow(sid, config.delta_r)]
            event = scheduler.plan(t, scores, eligible)
            if event is not None:
                for sid in event["selected"]:
                    model.grow(sid, config.delta_r, config.init_policy, config.init_std, growth_rng)
                record.growth_events.append(event)

        if cursor + bs > n:
            order = batch_rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + bs]
        cursor += bs
        lr = linear_decay(config.learning_rate, t, T) if config.lr_schedule == "linear" else config.learning_rate
        loss, grads = loss_and_grads(model, (task.X_train[idx], task.y_train[idx]), config, task.kind, step=t, train=True)
        optimizer.step(sites, grads, lr)
        bad = _first_bad_site(model)
        if bad is not None:
            raise NumericalError(f"non-finite parameter after step {t}", step=t, site_id=bad)
        R_t = scheduler.budget.R_t if scheduler is not None else (record.budget or {}).get("R_0")
        record.steps.append({"t": t, "loss": loss, "lr": lr, "R_t": R_t})

    record.eval_loss["final"] = evaluate(model, task.X_eval, task.y_eval, task.kind)
    record.final_ranks = model.rank_table()
    if keep_checkpoints and adapters:
        record.checkpoints["final"] = _snapshot(model)
    record.counters = {"score_flops": flops.count, "score_evaluations": n_evals}
