"""Physical detection model for the four-detector polarization receiver.

Click probabilities follow threshold detection of a Poisson source plus an
independent dark-count process: ``p = 1 - (1 - d) * exp(-mu)``.  Ideal BB84
sorting routes the received mean photon number to the detectors: the
same-basis correct detector gets half, the two opposite-basis detectors a
quarter each, and the same-basis wrong detector nothing.

The lookup table built here resolves each transmitted wavepacket into the
two sampling bins it straddles: the leading bin carries a fraction
``1 - alpha`` of the mean photon number and the trailing bin ``alpha``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .config import ProtocolConfig
from .errors import ConfigurationError

__all__ = [
    "AliceSymbol",
    "DETECTORS",
    "SIGNAL_SYMBOLS",
    "SORT_FRACTIONS",
    "DetectionTable",
    "click_probability",
    "invert_click_probability",
    "sort_photons",
    "build_detection_table",
    "estimate_mu",
]

#: Detector index order used for every length-4 axis in the package.
DETECTORS = ("H", "V", "L", "R")

PROB_FLOOR = 1e-300
PROB_CEIL = 1.0 - 1e-15


class AliceSymbol(enum.IntEnum):
    """Per-sampling-slot transmitter symbol.

    IDLE marks a sampling slot outside the wavepacket duty cycle; VACUUM is
    a decoy wavepacket with zero photons.  Both are photon-free but VACUUM
    occupies a duty-cycle slot.
    """

    IDLE = 0
    H = 1
    L = 2
    R = 3
    VACUUM = 4


#: Symbols that occupy a duty-cycle slot, in state_probabilities order.
SIGNAL_SYMBOLS = (AliceSymbol.H, AliceSymbol.L, AliceSymbol.R, AliceSymbol.VACUUM)

# Fraction of the received mean photon number each detector sees per symbol,
# row index = AliceSymbol value, columns = DETECTORS.  Ideal BB84 sorting;
# the V detector never receives same-basis photons because V is never sent.
SORT_FRACTIONS = np.array(
    [
        [0.0, 0.0, 0.0, 0.0],  # IDLE
        [0.5, 0.0, 0.25, 0.25],  # H
        [0.25, 0.25, 0.5, 0.0],  # L
        [0.25, 0.25, 0.0, 0.5],  # R
        [0.0, 0.0, 0.0, 0.0],  # VACUUM
    ]
)


def click_probability(mu_detector, dark_prob):
    """Probability that one detector clicks in one bin.

    ``1 - (1 - d) * exp(-mu)``: no click requires no dark count and zero
    Poisson photons.  Accepts scalars or arrays; monotone in both arguments.
    """
    mu = np.asarray(mu_detector, dtype=float)
    d = np.asarray(dark_prob, dtype=float)
    if np.any(mu < 0):
        raise ValueError("mean photon number must be >= 0")
    if np.any((d < 0) | (d >= 1)):
        raise ValueError("dark probability must lie in [0, 1)")
    out = -np.expm1(np.log1p(-d) - mu)
    if np.isscalar(mu_detector) and np.isscalar(dark_prob):
        return float(out)
    return out


def invert_click_probability(p_click, dark_prob):
    """Mean photon number implied by a click probability.

    Exact inverse of :func:`click_probability` at fixed dark probability:
    ``mu = ln((1 - d) / (1 - p))``.
    """
    p = np.asarray(p_click, dtype=float)
    d = np.asarray(dark_prob, dtype=float)
    if np.any((d < 0) | (d >= 1)):
        raise ValueError("dark probability must lie in [0, 1)")
    if np.any(p >= 1):
        raise ValueError("click probability must be < 1")
    if np.any(p < d):
        raise ValueError("click probability below the dark rate implies mu < 0")
    out = np.log1p(-d) - np.log1p(-p)
    if np.isscalar(p_click) and np.isscalar(dark_prob):
        return float(out)
    return out


def sort_photons(symbol: AliceSymbol, mu_total: float) -> np.ndarray:
    """Split a received mean photon number across the four detectors.

    Returns the per-detector means in DETECTORS order.  Lossless: the four
    outputs sum to ``mu_total`` for photon-carrying symbols and to zero for
    VACUUM and IDLE.
    """
    if mu_total < 0:
        raise ValueError("mean photon number must be >= 0")
    return SORT_FRACTIONS[AliceSymbol(symbol)] * mu_total


@dataclass(frozen=True)
class DetectionTable:
    """Per-sampling-bin click probabilities under both hypotheses.

    ``p_signal[symbol, role, detector]`` gives the click probability when
    the transmitter's published entry is known (role 0 = leading straddle
    bin, role 1 = trailing).  ``p_uninformed[role, detector]`` marginalizes
    the signal entries over the symbol distribution and models a duty-cycle
    slot of an unknown same-phase string; non-duty slots fall back to
    ``p_idle`` (dark counts only).  All probabilities are clamped into
    ``(0, 1)`` before the logs are taken so log-domain likelihoods stay
    finite even at d = 0.
    """

    n: int
    alpha: float
    mu_received: float
    dark_prob_sampling_bin: float
    state_probabilities: tuple
    p_signal: np.ndarray  # (5, 2, 4)
    p_idle: float
    p_uninformed: np.ndarray  # (2, 4)
    log_p_signal: np.ndarray
    log1m_p_signal: np.ndarray
    log_p_uninformed: np.ndarray
    log1m_p_uninformed: np.ndarray
    log_p_idle: float
    log1m_p_idle: float


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_FLOOR, PROB_CEIL)


def build_detection_table(
    config: ProtocolConfig,
    alpha: float,
    mu_received: float | None = None,
    detector_efficiency: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
) -> DetectionTable:
    """Build the click-probability lookup table for one straddle split.

    ``alpha`` is the table's assumed straddle fraction (the synchronizer
    defaults to 0.5 since the receiver does not know the true value).
    ``mu_received`` overrides the config's ``eta * mu_a``, e.g. with an
    estimate from the data.  ``detector_efficiency`` scales the per-detector
    mean photon numbers; non-ideal state fidelities are not modeled.
    """
    if not 0.0 <= alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1), got {alpha}")
    eff = np.asarray(detector_efficiency, dtype=float)
    if eff.shape != (4,) or np.any(eff < 0) or np.any(eff > 1):
        raise ConfigurationError("detector_efficiency must be 4 values in [0, 1]")
    mu = config.mu_received if mu_received is None else float(mu_received)
    if mu < 0:
        raise ConfigurationError(f"received mu must be >= 0, got {mu}")

    d_s = config.dark_prob_sampling_bin
    # (5, 4) per-detector means for a full wavepacket, then split by role.
    mu_det = SORT_FRACTIONS * mu * eff
    fractions = np.array([1.0 - alpha, alpha])
    mu_role = mu_det[:, None, :] * fractions[None, :, None]  # (5, 2, 4)

    p_signal = _clamp(click_probability(mu_role, d_s))
    p_idle = float(_clamp(np.asarray(click_probability(0.0, d_s))))

    weights = np.asarray(config.state_probabilities)
    signal_rows = [int(s) for s in SIGNAL_SYMBOLS]
    p_uninformed = _clamp(
        np.einsum("s,srl->rl", weights, p_signal[signal_rows])
    )

    return DetectionTable(
        n=config.n_sampling,
        alpha=alpha,
        mu_received=mu,
        dark_prob_sampling_bin=d_s,
        state_probabilities=tuple(config.state_probabilities),
        p_signal=p_signal,
        p_idle=p_idle,
        p_uninformed=p_uninformed,
        log_p_signal=np.log(p_signal),
        log1m_p_signal=np.log1p(-p_signal),
        log_p_uninformed=np.log(p_uninformed),
        log1m_p_uninformed=np.log1p(-p_uninformed),
        log_p_idle=float(np.log(p_idle)),
        log1m_p_idle=float(np.log1p(-p_idle)),
    )


def _mixture_log_survival(mu: float, weights: np.ndarray) -> float:
    """Sum over detectors of -ln E_s[exp(-mu_l(s))] for a full wavepacket.

    This is what the per-detector log-survival inversion converges to when
    click rates are averaged over the symbol mix; its low-mu expansion is
    ``(3/4) mu`` for the equal mix, which the 4/3 vacuum factor undoes.
    """
    total = 0.0
    for det in range(4):
        surv = weights @ np.exp(-SORT_FRACTIONS[1:5, det] * mu)
        total -= np.log(surv)
    return total


def estimate_mu(
    click_rates,
    dark_prob_comm_bin: float,
    n_sampling: int = 8,
    state_probabilities=(0.25, 0.25, 0.25, 0.25),
) -> float:
    """Estimate the received signal mean photon number from click rates.

    ``click_rates`` are the four per-detector click probabilities per
    communication bin, measured over the time-gated two-bin window that
    contains the wavepacket.  Each rate is inverted through the detection
    model (``ln((1-d_w)/(1-p))`` with ``d_w`` the dark probability of the
    two-bin window) and the per-detector log-survivals are matched against
    the known symbol mixture, which removes the averaging bias of the plain
    sum and keeps the estimator consistent.  In the low-mu limit this
    reduces to multiplying the summed inversions by 4/3, the correction for
    the 25% vacuum duty.
    """
    rates = np.asarray(click_rates, dtype=float)
    if rates.shape != (4,):
        raise ValueError("click_rates must hold one rate per detector (4 values)")
    if np.any(rates < 0) or np.any(rates >= 1):
        raise ValueError("click rates must lie in [0, 1)")
    if not 0.0 <= dark_prob_comm_bin < 1.0:
        raise ValueError("dark probability must lie in [0, 1)")
    weights = np.asarray(state_probabilities, dtype=float)
    if weights.shape != (4,) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("state_probabilities must be 4 values summing to 1")

    # Dark probability of the gated window: two sampling bins out of n.
    log1m_dark_window = 2.0 * np.log1p(-dark_prob_comm_bin) / n_sampling
    observed = float(np.sum(log1m_dark_window - np.log1p(-rates)))
    if observed <= 0.0:
        return 0.0

    # weights over {H, L, R, vacuum} and SORT_FRACTIONS rows 1..4 line up.
    hi = 1.0
    while _mixture_log_survival(hi, weights) < observed:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("click rates are inconsistent with any finite mu")
    return float(
        brentq(
            lambda mu: _mixture_log_survival(mu, weights) - observed,
            0.0,
            hi,
            xtol=1e-14,
            rtol=8.9e-16,
        )
    )
