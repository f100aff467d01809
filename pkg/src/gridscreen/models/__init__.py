from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evgnn import EVGNN
from .gdnn import GDNN, default_static_width
from .physics import (BusMasks, LossWeights, composite_loss, physics_residuals,
                      power_balance, residual_energy)
from .training import (MODEL_KINDS, History, TrainingDiverged, build_model,
                       evaluate_loss, train)

__all__ = [
    "BusMasks", "CheckpointError", "EVGNN", "GDNN", "History", "LossWeights", "MODEL_KINDS",
    "TrainingDiverged", "build_model", "composite_loss", "default_static_width",
    "evaluate_loss", "load_checkpoint", "physics_residuals", "power_balance",
    "residual_energy", "save_checkpoint", "train",
]
