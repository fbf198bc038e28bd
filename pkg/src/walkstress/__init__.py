"""Multimodal (EEG, EDA, BVP) walk-environment classification pipeline."""
from .density import dtw_align, geo_density, temporal_density, weighted_kde
from .forest import ForestModel, ForestParams, GridSpec, grid_search, predict_proba, train_forest
from .fusion import EXPERIMENTS, ExperimentSpec, FeatureMatrix, fuse
from .metrics import weighted_auroc
from .session import ChannelSeries, EnvironmentSchedule, Session, load_session, save_session
from .synth import canonical_benchmark, synth_session

__version__ = "0.1.0"

__all__ = [
    "ChannelSeries", "EnvironmentSchedule", "EXPERIMENTS", "ExperimentSpec", "FeatureMatrix",
    "ForestModel", "ForestParams", "GridSpec", "Session", "canonical_benchmark", "dtw_align",
    "fuse", "geo_density", "grid_search", "load_session", "predict_proba", "save_session",
    "synth_session", "temporal_density", "train_forest", "weighted_auroc", "weighted_kde",
]
