"""Frequency reflection modulation for RIS-aided OFDM uplinks.

Channel generation, the FRM signal model, Gaussian-approximation rates, RIS
phase optimization (MM, AO, RAO), the bilinear message-passing detector and a
seeded experiment harness.
"""
from .channel import (ChannelRealization, GeometryConfig, SystemConfig, db2pow, freq_response,
                      gen_channel_realization, gen_taps, path_loss_cascaded, path_loss_direct,
                      pow2db, random_geometry, rayleigh_realization, steering_vector)
from .detector import BmpConfig, BmpResult, CBelief, GampConfig, GaussStat, bmp_detect, map_oracle
from .experiments import ExperimentConfig, draw_realization, load_config, run_experiment
from .frm import (SCHEMES, EquivalentChannel, OfdmFrame, RisMessage, get_constellation,
                  group_expand, random_phases, simulate_rx, simulate_rx_orm, simulate_time_domain)
from .optimizer import (MonotonicityError, OptimizationResult, ao_optimize, mm_solve,
                        rao_optimize)
from .rates import (CovarianceModel, conditional_rate_ris, conditional_rate_user,
                    covariance_full, exact_mutual_info_oracle, sum_rate)

__version__ = "0.1.0"
