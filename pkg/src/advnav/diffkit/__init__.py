from advnav.diffkit import ops
from advnav.diffkit.gradcheck import GradCheckReport, grad_check
from advnav.diffkit.optim import SGD, Adam, adam_step, make_optimizer, sgd_step
from advnav.diffkit.params import (
    CheckpointError,
    ParamStore,
    checkpoint_bytes,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from advnav.diffkit.tape import Node, ShapeError, Tape

__all__ = [
    "ops", "GradCheckReport", "grad_check", "SGD", "Adam", "adam_step", "make_optimizer", "sgd_step",
    "CheckpointError", "ParamStore", "checkpoint_bytes", "load_checkpoint", "parse_checkpoint",
    "save_checkpoint", "Node", "ShapeError", "Tape",
]
