from .checkpoint import Checkpoint
from .config import ModelConfig
from .gradcheck import GradCheckReport, gradient_check
from .network import (
    Activations,
    Batch,
    Gradients,
    LossOutput,
    Parameters,
    add_classifier_head,
    attention_probabilities,
    backward,
    forward,
    init_parameters,
    mlm_loss,
    sequence_classification_loss,
    sop_loss,
    token_classification_loss,
)

__all__ = [
    "Activations",
    "Batch",
    "Checkpoint",
    "GradCheckReport",
    "Gradients",
    "LossOutput",
    "ModelConfig",
    "Parameters",
    "add_classifier_head",
    "attention_probabilities",
    "backward",
    "forward",
    "gradient_check",
    "init_parameters",
    "mlm_loss",
    "sequence_classification_loss",
    "sop_loss",
    "token_classification_loss",
]
