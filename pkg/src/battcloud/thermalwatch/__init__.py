"""Early thermal-anomaly detection by shape clustering of temperature windows."""

from .detect import (AnomalyVerdict, ClusterSnapshot, ShapeClusterState, WatchConfig, batches_from_matrix,
                     detect, init_state, isolate, watch)
from .shape import (KShapeResult, ShapeError, UndefinedDistanceError, kshape, ncc_sequence, sbd,
                    shape_extract, shift_series, znormalize)
