"""Typicality-based, consistency-aware fusion of language, visual and acoustic inputs."""

from .ballgeom import BallConfig, BallPoint, ball_distance, project_to_ball
from .consistency import ConsistencyParams, consistency, label_discrepancy, typicality, unimodal_weight
from .datasyn import Dataset, SyntheticSpec, generate
from .emotree import EmotionTree, TreeSpec, build_tree, tree_distance
from .metrics import compute_metrics
from .trainer import Trainer, TrainConfig

__version__ = "0.1.0"
