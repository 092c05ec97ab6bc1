from .losses import LayerOutput, LossBreakdown, compute_loss, focal_loss
from .matcher import MatchResult, cost_matrix, hungarian_match, match_cost, match_image

__all__ = [
    "LayerOutput", "LossBreakdown", "MatchResult", "compute_loss", "cost_matrix",
    "focal_loss", "hungarian_match", "match_cost", "match_image",
]
