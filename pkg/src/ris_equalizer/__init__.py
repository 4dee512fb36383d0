"""RIS-assisted spatial equalization for multi-user MISO downlinks."""

from .baselines import QuantizerSpec, non_ris_isi, quantize_phases, random_phases, remark1_phases
from .channel import (ChannelSet, ConfigurationError, PathLossParams, ScenarioConfig,
                      SvFadingParams, TapDelayLine, assemble_channels, build_geometry,
                      path_loss_direct, path_loss_reflected, sample_sv_taps)
from .experiment import ExperimentConfig, load_config, run_monte_carlo, run_single
from .isi import (IsiDecomposition, IsiWindow, composite_response, decompose,
                  decompose_channels, isi_frequency, isi_time_domain, max_isi_power)
from .pso import PsoConfig, PsoSolution, optimize

__version__ = "0.1.0"
