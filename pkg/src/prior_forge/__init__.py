"""prior-forge: class-conditioned spatial priors for object placement.

The engine scores a deterministic grid of candidate boxes by orchestrating
pluggable inpaint/detect/rank workers, assembles the verified placements
into per-scene priors, calibrates a divergence-based early-stop filter,
evaluates extracted priors, and ships the matching/loss math needed to
distill them into a lightweight placement model.
"""

from .earlystop import (CalibrationResult, DivergenceTrace, calibrate,
                        calibration_sweep)
from .geometry import BBox, ProposalConfig, generate_proposals, giou, iou
from .matchloss import (MatchAssignment, PredictionSet, SupervisionSet,
                        bbox_loss, hungarian_match, match_cost,
                        plausibility_targets, select_supervision, total_loss)
from .metrics import EvalInstance, iou50_at_k, iou_at_k, mean_ap
from .pipeline import (DatasetRecord, RunConfig, Taxonomy, assign_splits,
                       run_scene, sample_pairs)
from .placement import select_top1
from .prior import (Heatmap, PriorEntry, SpatialPrior, aggregate_class_prior,
                    assemble_prior, rasterize_heatmap)
from .verify import (Detection, VerifiedPlacement, select_verified,
                     suppress_preexisting)

__version__ = "0.1.0"

__all__ = [
    "BBox", "ProposalConfig", "generate_proposals", "iou", "giou",
    "Detection", "VerifiedPlacement", "select_verified", "suppress_preexisting",
    "SpatialPrior", "PriorEntry", "Heatmap", "assemble_prior",
    "rasterize_heatmap", "aggregate_class_prior",
    "DivergenceTrace", "CalibrationResult", "calibrate", "calibration_sweep",
    "Taxonomy", "DatasetRecord", "RunConfig", "run_scene", "sample_pairs",
    "assign_splits",
    "PredictionSet", "SupervisionSet", "MatchAssignment", "select_supervision",
    "match_cost", "hungarian_match", "bbox_loss", "plausibility_targets",
    "total_loss",
    "EvalInstance", "iou_at_k", "iou50_at_k", "mean_ap",
    "select_top1",
    "__version__",
]
