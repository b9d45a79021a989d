"""Simulation and analysis of collision-run detection for in-band Diffie-Hellman pairing
over an 802.11 DCF channel."""

from .analysis import (bianchi_fixed_point, channel_collision_prob, cost_metrics,
                       false_positive_ratio, solve_markov_bruteforce, stationary_alarm_prob)
from .detection import (DetectionContext, DetectorState, TransmissionOutcome, classify_occupancy,
                        detector_update, evaluate_rules, interval_pattern_check)
from .mac import ChannelTrace, ConfigError, Frame, MacParams, air_time, backoff_draw
from .pairing import (DhGroup, PairingConfig, build_message, dh_public, dh_shared,
                      estimate_channel, parse_message, select_m)
from .scenario import RunResult, ScenarioConfig, TrafficConfig, run

__version__ = "0.1.0"
