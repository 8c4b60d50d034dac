"""Windowed social-group detection."""
from .clustering import (
    ALPHA_DEFAULT,
    BETA_DEFAULT,
    AffinityMatrix,
    FeatureScaling,
    GroupPartition,
    affinity_matrix,
    correlation_clustering,
    dissimilarities,
    pair_affinity,
    partition_objective,
    single_move_improvement,
)
from .detect import GroupingParams, detect_groups
from .features import (
    HALL_SIGMAS,
    TAU_S_DEFAULT,
    TAU_V_DEFAULT,
    FeatureParams,
    NoCooccurrence,
    NormBounds,
    PairFeatures,
    dtw_distance,
    feature_proxemics_f1,
    frame_feature,
    granger_causality_f3,
    granger_f_statistic,
    pair_features,
    path_convergence_f4,
    proxemics_gmm,
)
from .windows import MemberSamples, TrajectoryWindow, build_windows, member_from_samples
