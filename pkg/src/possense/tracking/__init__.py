from .assignment import (
    CHI2INV95,
    INFTY_COST,
    AssociationCost,
    Assignment,
    MissingAppearance,
    appearance_distance,
    combined_cost,
    hungarian_assign,
    iou,
    iou_matrix,
)
from .kalman import KalmanModel, KalmanNumericalError, mahalanobis_sq
from .tracker import (
    Track,
    Tracker,
    TrackerConfig,
    TrackingError,
    Tracklet,
    TrackState,
    TrackStatus,
    filter_short_tracklets,
    kalman_predict,
    kalman_update,
    motion_distance,
    mot_result_lines,
    write_mot_results,
)
