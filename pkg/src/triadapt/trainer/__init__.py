"""Toy host models, synthetic tasks and the growth-aware training loop."""

from .loop import (
    RunRecord,
    TrainConfig,
    evaluate,
    lora_baseline_step,
    loss_and_grads,
    run_training,
    task_loss,
)
from .models import (
    ROLES,
    AdapterSite,
    FrozenSite,
    FullSite,
    ToyModel,
    attention_forward,
    build_model,
    make_base_weights,
    site_shapes,
)
from .optim import AdamW, SGDW, linear_decay, make_optimizer
from .tasks import SyntheticTask, make_task

__all__ = [
    "ROLES",
    "AdamW",
    "AdapterSite",
    "FrozenSite",
    "FullSite",
    "RunRecord",
    "SGDW",
    "SyntheticTask",
    "ToyModel",
    "TrainConfig",
    "attention_forward",
    "build_model",
    "evaluate",
    "linear_decay",
    "lora_baseline_step",
    "loss_and_grads",
    "make_base_weights",
    "make_optimizer",
    "make_task",
    "run_training",
    "site_shapes",
    "task_loss",
]
