"""Blind channel estimation and detection for uplink power-domain NOMA.

Received samples are clustered with a Gaussian mixture (EM), the channel of
the strongest remaining user is read off the cluster centroids, a few
pilots fix the constellation's rotational ambiguity, and successive
interference cancellation peels users off one at a time.
"""
from .channel import ChannelState, FixedSnr, Rayleigh, draw_channel, transmit
from .gmm import EmConfig, GmmFit, fit
from .harness import ExperimentConfig, ResultRow, emit_csv, load_config, run_experiment
from .modem import (ConfigurationError, Constellation, InputError, ParameterError,
                    build_constellation, demap, modulate)
from .receiver import (Pilots, gmm_sic_detect, grant_free_detect, mld_full_csi,
                       mld_pilot_csi, pilot_sequences)

__version__ = "0.1.0"
