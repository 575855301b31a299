"""Online contrastive-embedding instance association with a scenario simulator."""

from .assoc import (
    AssociationConfig,
    Detection,
    FrameResult,
    MemoryBank,
    OnlineAssociator,
    TrackedInstance,
    associate_frame,
    similarity_matrix,
    temporal_embedding,
)
from .embed import ContrastiveBatch, contrastive_loss, contrastive_loss_grad, dot_similarity
from .evaluation import MetricsReport, OracleMode, evaluate, oracle_run
from .geometry import Box, giou, iou, nms
from .sampling import CostWeights, GroundTruthInstance, Prediction, matching_cost, select_samples
from .sim import GroundTruthTrack, ScenarioConfig, generate

__version__ = "0.1.0"
