"""State-of-charge estimation: coulomb counting baseline and a small feed-forward network."""

from .network import (FullChargeRule, Normalization, SocError, SocEstimate, SocNetwork, SocTrace,
                      WindowConfig, build_features, coulomb_count, coulomb_soc, predict, rate_limit,
                      stack_history, uniform_channels)
from .training import (LMConfig, SplitConfig, TrainingError, TrainReport, evaluate, levenberg_marquardt,
                       lm_step, train)
