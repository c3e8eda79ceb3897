"""Capacity-fade estimation from differential voltage / incremental capacity curves."""

from .curves import (DiffConfig, DifferentialCurves, GateDecision, InsufficientDataError, SohError,
                     SohGateConfig, cc_span, differential_curves, gate_segment, soh_c)
from .features import (NMC_GRAPHITE_FEATURES, DistanceSpec, DvaFeatureSet, Feature, FeatureConfig,
                       FeatureMissingError, FeatureSpec, extract_features, find_extrema, locate_peaks)
from .lut import (CalibrationError, EstimationError, LutConfig, LutRow, SohEstimate, SohLut, build_lut,
                  estimate_soh, fit_line)
