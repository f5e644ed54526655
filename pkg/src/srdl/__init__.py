"""Multi-label image recognition with category-specific attentional regions
and adaptive object erasing."""

from .car import AttentionPair, CarParameters, car_forward
from .erasing import ErasureConfig, oe_forward
from .graph import LabelGraph, LabelVocabulary, init_graph
from .losses import CategoryClassifier, bce, total_loss
from .metrics import MetricsReport, evaluate
from .model import SRDLNet

__version__ = "0.1.0"
