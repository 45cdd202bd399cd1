"""Decoy-state BB84 session simulator and Bayesian clock-offset recovery."""

from .config import ProtocolConfig, load_config, parse_config_text
from .detection import (
    AliceSymbol,
    DETECTORS,
    DetectionTable,
    build_detection_table,
    click_probability,
    estimate_mu,
    invert_click_probability,
    sort_photons,
)
from .errors import (
    CoarseEstimationFailed,
    ConfigurationError,
    DriftFitUnavailable,
    QsyncError,
    SessionFormatError,
)
from .session import (
    AliceString,
    BobRecord,
    GroundTruth,
    coarse_estimate,
    generate_alice,
    make_ground_truth,
    simulate_bob,
)
from .sync import (
    DriftFit,
    PairCounts,
    SyncResult,
    batch_synchronize,
    count_pairings,
    gate_occupied_slots,
    log_likelihood_window,
    posterior,
    synchronize,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ProtocolConfig",
    "load_config",
    "parse_config_text",
    "AliceSymbol",
    "DETECTORS",
    "DetectionTable",
    "build_detection_table",
    "click_probability",
    "estimate_mu",
    "invert_click_probability",
    "sort_photons",
    "QsyncError",
    "ConfigurationError",
    "SessionFormatError",
    "CoarseEstimationFailed",
    "DriftFitUnavailable",
    "AliceString",
    "BobRecord",
    "GroundTruth",
    "generate_alice",
    "make_ground_truth",
    "simulate_bob",
    "coarse_estimate",
    "PairCounts",
    "SyncResult",
    "DriftFit",
    "count_pairings",
    "log_likelihood_window",
    "posterior",
    "synchronize",
    "batch_synchronize",
    "gate_occupied_slots",
]
