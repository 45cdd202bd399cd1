"""Simulated QKD session: transmitter string, receiver record, coarse onset fit.

The transmitter emits one wavepacket at the start of each communication bin
(slot 0 of the n-slot period); the receiver records four-detector click
outcomes per sampling bin.  The record is bookended by dark-count-only
regions before and after the transmission, and linear clock drift is applied
as integer sampling-bin slips whenever the accumulated offset crosses a bin
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ProtocolConfig
from .detection import SORT_FRACTIONS, AliceSymbol, click_probability
from .errors import CoarseEstimationFailed

__all__ = [
    "AliceString",
    "BobRecord",
    "GroundTruth",
    "CoarseWindow",
    "generate_alice",
    "make_ground_truth",
    "simulate_bob",
    "coarse_estimate",
    "drift_slips",
]

#: Sampling bins aggregated per block by the step fit.
COARSE_BLOCK = 512
#: Candidate-offset window width around the step-fit onset.
DEFAULT_M_WINDOW = 4000
# Minimum Poisson z-score of the in-step click excess.  Against the known
# dark rate the null maximum over ~1e2 box positions stays below ~4; the
# empirical-baseline variant scans ~1e4 boundary pairs and needs more slack.
_STEP_MIN_Z_KNOWN_DARK = 5.0
_STEP_MIN_Z_EMPIRICAL = 6.0
# Shortest step the fit may select, in blocks.  Excludes single-block noise
# spikes, which otherwise win at very low signal rates; every supported
# session layout keeps the transmission far wider than this.
_STEP_MIN_BLOCKS = 4


@dataclass(frozen=True)
class AliceString:
    """Transmitter symbols at sampling-bin resolution.

    ``symbols[k]`` is the :class:`AliceSymbol` occupying sampling slot k;
    exactly one non-IDLE symbol sits at slot 0 of each n-slot period.
    """

    symbols: np.ndarray  # uint8, length = comm_bins * n
    n: int

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def comm_bins(self) -> int:
        return len(self.symbols) // self.n

    def comm_symbols(self) -> np.ndarray:
        """Per-communication-bin symbols (the slot-0 entries)."""
        return self.symbols[:: self.n]


@dataclass(frozen=True)
class BobRecord:
    """Receiver outcomes: one boolean per sampling bin per detector (HVLR)."""

    clicks: np.ndarray  # bool, shape (record_len, 4)
    n: int

    def __len__(self) -> int:
        return len(self.clicks)

    @property
    def click_fraction(self) -> float:
        return float(self.clicks.any(axis=1).mean())


@dataclass(frozen=True)
class GroundTruth:
    """What the simulator actually did, for scoring the synchronizer.

    ``true_offset_bins`` is the sampling-bin index of the receiver record
    where the transmitter's first string entry lands (equal to
    ``transmission_start``); ``alpha`` is the sub-bin straddle fraction.
    """

    true_offset_bins: int
    alpha: float
    drift_ppm: float
    transmission_start: int
    transmission_end: int

    def __post_init__(self) -> None:
        if self.true_offset_bins != self.transmission_start:
            raise ValueError(
                "true_offset_bins must equal transmission_start "
                "(the first transmitted bin's record index)"
            )
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")


def drift_slips(config: ProtocolConfig, comm_bins: int) -> np.ndarray:
    """Integer sampling-bin slips accumulated by each communication bin.

    The offset grows by ``drift_ppm * n`` sampling bins per communication
    bin; a slip is applied whenever the accumulated drift crosses a bin
    boundary.  Jitter and higher-order drift are not modeled.
    """
    c = np.arange(comm_bins, dtype=float)
    return np.floor(config.drift_ppm * config.n_sampling * c).astype(np.int64)


def make_ground_truth(
    config: ProtocolConfig, alice_comm_bins: int, transmission_start: int
) -> GroundTruth:
    """Derive the ground truth for a session starting at the given record bin."""
    if transmission_start < 0:
        raise ValueError("transmission_start must be >= 0")
    slips = drift_slips(config, alice_comm_bins)
    last_lead = transmission_start + (alice_comm_bins - 1) * config.n_sampling + int(slips[-1])
    return GroundTruth(
        true_offset_bins=transmission_start,
        alpha=config.alpha,
        drift_ppm=config.drift_ppm,
        transmission_start=transmission_start,
        # +1: the trailing straddle bin of the last wavepacket.
        transmission_end=last_lead + 1,
    )


def generate_alice(config: ProtocolConfig, length_comm_bins: int, rng_seed) -> AliceString:
    """Draw a pseudorandom transmitter string of whole communication bins.

    Each communication bin carries one symbol drawn iid from
    ``state_probabilities`` at slot 0; the remaining n-1 slots are IDLE.
    Deterministic for a fixed seed.
    """
    if length_comm_bins < 1:
        raise ValueError("length_comm_bins must be >= 1")
    rng = np.random.default_rng(rng_seed)
    n = config.n_sampling
    cum = np.cumsum(config.state_probabilities)
    draws = np.searchsorted(cum, rng.random(length_comm_bins), side="right")
    codes = np.array(
        [AliceSymbol.H, AliceSymbol.L, AliceSymbol.R, AliceSymbol.VACUUM],
        dtype=np.uint8,
    )[np.minimum(draws, 3)]
    symbols = np.zeros(length_comm_bins * n, dtype=np.uint8)
    symbols[::n] = codes
    return AliceString(symbols=symbols, n=n)


def simulate_bob(
    alice: AliceString,
    config: ProtocolConfig,
    truth: GroundTruth,
    record_len: int,
    rng_seed,
) -> BobRecord:
    """Simulate the receiver's per-sampling-bin click record.

    Every bin of every detector clicks independently with the probability
    given by the detection model: dark counts everywhere, plus the sorted
    share of each wavepacket in the two sampling bins it straddles (the
    leading bin gets a fraction ``1 - alpha``, the trailing ``alpha``).
    Bins outside ``[transmission_start, transmission_end]`` see dark counts
    only.  Detector deadtime and afterpulsing are not modeled.
    """
    n = config.n_sampling
    comm_bins = alice.comm_bins
    if truth.transmission_end >= record_len:
        raise ValueError(
            f"record_len {record_len} too short: transmission ends at "
            f"{truth.transmission_end}"
        )

    slips = drift_slips(config, comm_bins)
    lead = truth.transmission_start + np.arange(comm_bins, dtype=np.int64) * n + slips
    mu_det = SORT_FRACTIONS[alice.comm_symbols()] * config.mu_received  # (C, 4)

    mu_bins = np.zeros((record_len, 4))
    np.add.at(mu_bins, lead, mu_det * (1.0 - truth.alpha))
    np.add.at(mu_bins, lead + 1, mu_det * truth.alpha)

    p = click_probability(mu_bins, config.dark_prob_sampling_bin)
    rng = np.random.default_rng(rng_seed)
    clicks = rng.random((record_len, 4)) < p
    return BobRecord(clicks=clicks, n=n)


@dataclass(frozen=True)
class CoarseWindow:
    """Step-fit result: a candidate-offset window and the fitted region."""

    window_start: int
    m_window: int
    fit_start: int
    fit_end: int  # one past the last in-step block's bins
    z_score: float


def coarse_estimate(
    bob: BobRecord,
    m_window: int = DEFAULT_M_WINDOW,
    block: int = COARSE_BLOCK,
    expected_width: int | None = None,
    dark_rate_per_bin: float | None = None,
) -> CoarseWindow:
    """Locate the transmission region with a best-fit step function.

    Aggregate clicks are binned into blocks and fitted with a two-level
    step (rate high inside ``[e1, e2)``, low outside).  When
    ``expected_width`` is given (the published string length is known, so
    the receiver knows how many sampling bins the transmission spans), the
    fit slides a fixed-width box and maximizes the in-box click count;
    otherwise both edges are scanned exhaustively with a Poisson
    log-likelihood score.  The Poisson score is the right objective for
    these sparse counts: a plain squared-error fit latches onto
    single-block noise spikes once the signal drops to a few clicks per
    block.

    The in-step click excess must be significant or
    :class:`CoarseEstimationFailed` is raised; ``dark_rate_per_bin`` (the
    per-detector per-sampling-bin dark probability, known from system
    characterization) gives the test its null rate, with a noisier
    empirical fallback when omitted.  The returned window of ``m_window``
    candidate offsets is centered on the fitted onset.
    """
    totals = bob.clicks.sum(axis=1).astype(np.int64)
    nblocks = len(totals) // block
    if nblocks < _STEP_MIN_BLOCKS + 1:
        raise CoarseEstimationFailed(
            f"record too short for the step fit: {len(totals)} bins "
            f"< {(_STEP_MIN_BLOCKS + 1) * block}"
        )
    counts = totals[: nblocks * block].reshape(nblocks, block).sum(axis=1)
    prefix = np.concatenate([[0], np.cumsum(counts)]).astype(float)
    total = prefix[-1]
    if total <= 0:
        raise CoarseEstimationFailed("record contains no clicks")

    if expected_width is not None:
        width = max(_STEP_MIN_BLOCKS, min(round(expected_width / block), nblocks - 1))
        box = prefix[width:] - prefix[: nblocks + 1 - width]  # clicks per position
        e1 = int(np.argmax(box))
        e2 = e1 + width
    else:
        # Maximize C_in*log(rate_in) + C_out*log(rate_out) over all pairs
        # 0 <= e1 < e2 <= nblocks (the -rate*len terms cancel at the
        # per-segment MLE rates, with 0*log(0) = 0).
        c_in = prefix[None, :] - prefix[:, None]  # c_in[e1, e2]
        len_in = (
            np.arange(nblocks + 1)[None, :] - np.arange(nblocks + 1)[:, None]
        ).astype(float)
        len_out = nblocks - len_in
        c_out = total - c_in
        valid = (len_in >= _STEP_MIN_BLOCKS) & (len_out >= 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(c_in > 0, c_in * np.log(c_in / len_in), 0.0) + np.where(
                c_out > 0, c_out * np.log(c_out / len_out), 0.0
            )
            score = np.where(
                valid & (c_in * len_out > c_out * len_in), score, -np.inf
            )
        if not np.isfinite(score).any():
            raise CoarseEstimationFailed("no step candidate exceeds the dark level")
        e1, e2 = (int(i) for i in np.unravel_index(np.argmax(score), score.shape))

    clicks_in = float(prefix[e2] - prefix[e1])
    blocks_in = e2 - e1
    if dark_rate_per_bin is not None:
        # One-sided Poisson test against the known dark level.
        expected = 4.0 * dark_rate_per_bin * blocks_in * block
        z = (clicks_in - expected) / np.sqrt(max(expected, 1.0))
        min_z = _STEP_MIN_Z_KNOWN_DARK
    else:
        blocks_out = nblocks - blocks_in
        rate_out = (total - clicks_in) / max(blocks_out, 1)
        expected = rate_out * blocks_in
        z = (clicks_in - expected) / np.sqrt(max(expected, 1.0))
        min_z = _STEP_MIN_Z_EMPIRICAL
    if z < min_z:
        raise CoarseEstimationFailed(
            f"no significant transmission step found (z = {z:.2f})"
        )

    fit_start = e1 * block
    window_start = max(0, min(fit_start - m_window // 2, len(bob) - m_window))
    return CoarseWindow(
        window_start=window_start,
        m_window=m_window,
        fit_start=fit_start,
        fit_end=e2 * block,
        z_score=float(z),
    )
