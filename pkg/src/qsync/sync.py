"""Bayesian clock-offset recovery from published symbols and click records.

For each candidate offset j in a window of M lags, the log numerator of the
posterior factors into three stretches: bins before the aligned segment and
bins after it are scored under the uninformed same-phase hypothesis, bins
inside it under the published-string hypothesis.  Writing the middle stretch
as a likelihood ratio against the baseline makes the dark slots cancel, so
the whole window reduces to

    L(j) = B(j mod n) + sum over (symbol, detector) of
           C_lead * w_lead + C_trail * w_trail + totals * w_const

where the pair counts C come from FFT cross-correlations of the symbol
indicator sequences with the click indicator sequences.  The trailing
straddle bin of the wavepacket sits one sampling bin after the leading one,
so its pair counts for candidate j are the lead counts at lag j + 1; one
extra lag therefore serves both roles.  The baseline B depends only on the
candidate's phase class (j mod n), giving n evaluations instead of M.

Posterior normalization runs in the log domain with max-subtraction since
the raw numerators underflow any floating format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import ProtocolConfig
from .detection import (
    SIGNAL_SYMBOLS,
    AliceSymbol,
    DetectionTable,
    build_detection_table,
    estimate_mu,
)
from .errors import DriftFitUnavailable
from .session import (
    COARSE_BLOCK,
    DEFAULT_M_WINDOW,
    AliceString,
    BobRecord,
    coarse_estimate,
)

__all__ = [
    "PairCounts",
    "SyncResult",
    "DriftFit",
    "count_pairings",
    "log_likelihood_window",
    "posterior",
    "synchronize",
    "batch_synchronize",
    "estimate_phase",
    "gate_occupied_slots",
    "gated_click_rates",
]

_SIGNAL_ROWS = [int(s) for s in SIGNAL_SYMBOLS]


@dataclass(frozen=True)
class PairCounts:
    """FFT-derived event-pairing counts for every lag of one window.

    ``counts[lag, symbol, detector]`` is the number of positions where the
    transmitter segment holds ``symbol`` and the given detector clicked
    ``lag`` bins later.  ``totals[symbol]`` counts the segment entries per
    symbol (lag-independent).  The per-phase click summary of the full
    window (used for the uninformed baseline) rides along.
    """

    counts: np.ndarray  # (n_lags, 5, 4) int64
    totals: np.ndarray  # (5,) int64
    n: int
    segment_len: int
    window_clicks_by_phase: np.ndarray  # (n, 4) int64
    window_bins_by_phase: np.ndarray  # (n,) int64

    @property
    def n_lags(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True)
class SyncResult:
    """Outcome of one synchronization attempt over M candidate offsets."""

    best_index: int
    confidence: float
    posterior: np.ndarray
    window_start: int
    mu_estimate: float

    @property
    def absolute_offset(self) -> int:
        """Best offset relative to the receiver record origin."""
        return self.window_start + self.best_index

    def to_json(self, emit_posterior: bool = False) -> str:
        payload = {
            "window_start": int(self.window_start),
            "best_index": int(self.best_index),
            "absolute_offset": int(self.absolute_offset),
            "confidence": float(self.confidence),
            "mu_estimate": float(self.mu_estimate),
        }
        if emit_posterior:
            payload["posterior"] = [float(p) for p in self.posterior]
        return json.dumps(payload, indent=2, sort_keys=True)


def count_pairings(alice_segment: np.ndarray, bob_segment: np.ndarray, n: int) -> PairCounts:
    """Count (symbol, click) pairings at every lag via FFT cross-correlation.

    ``alice_segment`` holds N symbol codes, ``bob_segment`` the boolean
    clicks of N + M window bins; all M + 1 full-overlap lags are returned.
    One correlation per symbol-indicator / detector pair (5 x 4) recovers
    the exact integer counts after rounding; FFT length is the next power
    of two at or above the window length.
    """
    alice_segment = np.asarray(alice_segment)
    clicks = np.asarray(bob_segment)
    n_alice = len(alice_segment)
    n_window = len(clicks)
    if n_alice < 1:
        raise ValueError("empty transmitter segment")
    if clicks.ndim != 2 or clicks.shape[1] != 4:
        raise ValueError("bob_segment must have shape (window, 4)")
    if n_window < n_alice:
        raise ValueError(
            f"window ({n_window}) shorter than transmitter segment ({n_alice})"
        )
    n_lags = n_window - n_alice + 1

    fft_len = 1 << int(np.ceil(np.log2(n_window)))
    click_f = np.fft.rfft(clicks.astype(float), n=fft_len, axis=0)  # (F, 4)

    counts = np.empty((n_lags, 5, 4), dtype=np.int64)
    totals = np.empty(5, dtype=np.int64)
    for sym in range(5):
        indicator = (alice_segment == sym).astype(float)
        totals[sym] = int(indicator.sum())
        if totals[sym] == 0:
            counts[:, sym, :] = 0
            continue
        ind_f = np.conj(np.fft.rfft(indicator, n=fft_len))
        corr = np.fft.irfft(ind_f[:, None] * click_f, n=fft_len, axis=0)[:n_lags]
        rounded = np.rint(corr)
        if np.max(np.abs(corr - rounded)) > 1e-6:
            raise ArithmeticError("FFT correlation drifted from integer counts")
        counts[:, sym, :] = rounded.astype(np.int64)

    if np.any(counts < 0) or np.any(counts > totals[None, :, None]):
        raise ArithmeticError("pair counts violate their totals bounds")

    phases = np.arange(n_window) % n
    window_clicks = np.zeros((n, 4), dtype=np.int64)
    np.add.at(window_clicks, phases, clicks.astype(np.int64))
    window_bins = np.bincount(phases, minlength=n).astype(np.int64)

    return PairCounts(
        counts=counts,
        totals=totals,
        n=n,
        segment_len=n_alice,
        window_clicks_by_phase=window_clicks,
        window_bins_by_phase=window_bins,
    )


def _phase_baselines(counts: PairCounts, table: DetectionTable) -> np.ndarray:
    """Log probability of the whole window under the uninformed hypothesis,
    one value per phase class of the candidate offset."""
    n = counts.n
    baselines = np.empty(n)
    log_p = np.empty((n, 4))
    log1m = np.empty((n, 4))
    for phase in range(n):
        log_p[:] = table.log_p_idle
        log1m[:] = table.log1m_p_idle
        log_p[phase] = table.log_p_uninformed[0]
        log1m[phase] = table.log1m_p_uninformed[0]
        log_p[(phase + 1) % n] = table.log_p_uninformed[1]
        log1m[(phase + 1) % n] = table.log1m_p_uninformed[1]
        clicks = counts.window_clicks_by_phase
        bins = counts.window_bins_by_phase[:, None]
        baselines[phase] = float(np.sum(clicks * log_p + (bins - clicks) * log1m))
    return baselines


def log_likelihood_window(counts: PairCounts, table: DetectionTable) -> np.ndarray:
    """Per-candidate log numerator of the offset posterior.

    Consumes the lead pair counts at each lag and the trail counts one lag
    later, so a PairCounts over M + 1 lags yields M candidates.  The
    transmitter segment must start on a communication-bin boundary and span
    whole periods.
    """
    if counts.n != table.n:
        raise ValueError(
            f"phase-class mismatch: counts built for n={counts.n}, "
            f"table for n={table.n}"
        )
    if counts.segment_len % counts.n != 0:
        raise ValueError("transmitter segment must span whole communication bins")
    if counts.n_lags < 2:
        raise ValueError("need at least 2 lags (M >= 1 candidates)")

    # Likelihood-ratio weights against the same-phase uninformed baseline;
    # dark-only slots cancel exactly and drop out.
    dlp = table.log_p_signal[_SIGNAL_ROWS] - table.log_p_uninformed[None, :, :]
    dl1m = table.log1m_p_signal[_SIGNAL_ROWS] - table.log1m_p_uninformed[None, :, :]
    w_click = dlp - dl1m  # (4, 2, 4): symbol, role, detector
    totals = counts.totals[_SIGNAL_ROWS].astype(float)
    const = float(np.einsum("s,srl->", totals, dl1m))

    signal_counts = counts.counts[:, _SIGNAL_ROWS, :].astype(float)
    lead = np.einsum("jsl,sl->j", signal_counts[:-1], w_click[:, 0, :])
    trail = np.einsum("jsl,sl->j", signal_counts[1:], w_click[:, 1, :])

    m_candidates = counts.n_lags - 1
    baselines = _phase_baselines(counts, table)
    phase_of_lag = np.arange(m_candidates) % counts.n
    return baselines[phase_of_lag] + lead + trail + const


def posterior(log_numerators) -> np.ndarray:
    """Normalize per-candidate log numerators into a probability vector.

    Log-sum-exp with max subtraction; invariant under a common shift of the
    inputs.  Rejects empty and non-finite input.
    """
    values = np.asarray(log_numerators, dtype=float)
    if values.size == 0:
        raise ValueError("posterior needs at least one candidate")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite log numerator")
    shifted = values - values.max()
    weights = np.exp(shifted)
    return weights / weights.sum()


def estimate_phase(clicks: np.ndarray, n: int, start: int = 0) -> int:
    """Phase class (record index mod n) of the leading occupied slot.

    Buckets clicks by index mod n and picks the adjacent pair with the
    largest combined count; ``start`` is the absolute index of row 0.
    """
    totals = clicks.sum(axis=1).astype(np.int64)
    phases = (np.arange(len(totals)) + start) % n
    by_phase = np.bincount(phases, weights=totals, minlength=n)
    pair_scores = by_phase + np.roll(by_phase, -1)
    return int(np.argmax(pair_scores))


def gate_occupied_slots(bob: BobRecord, phase: int, start: int = 0, end: int | None = None) -> np.ndarray:
    """Collapse the record to its two occupied slots per period.

    Returns one row per communication bin with the OR of the leading and
    trailing slot clicks, for the region ``[start, end)``.  This is the
    time-gating applied after synchronization to discard the dark-only
    slots.
    """
    n = bob.n
    if end is None:
        end = len(bob)
    first = start + (phase - start) % n
    leads = np.arange(first, end - 1, n)
    if len(leads) == 0:
        raise ValueError("region too short to gate")
    return bob.clicks[leads] | bob.clicks[leads + 1]


def gated_click_rates(bob: BobRecord, phase: int, start: int, end: int) -> np.ndarray:
    """Per-detector click probability per communication bin over the gated
    two-slot window."""
    gated = gate_occupied_slots(bob, phase, start, end)
    return gated.mean(axis=0)


def synchronize(
    alice: AliceString,
    bob: BobRecord,
    config: ProtocolConfig,
    comparison_len: int,
    m_window: int = DEFAULT_M_WINDOW,
    alpha_model: float = 0.5,
    mu_override: float | None = None,
    alice_start: int = 0,
    expected_offset: int | None = None,
) -> SyncResult:
    """Full synchronization pipeline for one record.

    Steps: coarse step fit to place the candidate window, phase and mean
    photon number estimation on the fitted region, detection-table build at
    the model straddle fraction, FFT pair counting, per-candidate log
    likelihoods, and posterior normalization.  ``comparison_len`` is the
    transmitter-segment length N in sampling bins (whole periods).  When
    ``expected_offset`` is given (batch mode), the candidate window centers
    there instead of on the step fit.  ``mu_override`` wins over the
    estimate when provided.
    """
    n = config.n_sampling
    if comparison_len < n or comparison_len % n != 0:
        raise ValueError(
            f"comparison_len must be a positive multiple of n={n}, "
            f"got {comparison_len}"
        )
    if alice_start % n != 0:
        raise ValueError("alice_start must fall on a communication-bin boundary")
    if alice_start + comparison_len > len(alice):
        raise ValueError(
            f"transmitter string too short: need {alice_start + comparison_len} "
            f"bins, have {len(alice)}"
        )
    if len(bob) < m_window + comparison_len:
        raise ValueError(
            f"record too short: need at least {m_window + comparison_len} bins "
            f"to scan {m_window} candidates"
        )

    coarse = coarse_estimate(
        bob,
        m_window=m_window,
        expected_width=len(alice),
        dark_rate_per_bin=config.dark_prob_sampling_bin,
    )
    if expected_offset is None:
        window_start = coarse.window_start
    else:
        window_start = expected_offset - m_window // 2
    window_start = max(0, min(window_start, len(bob) - (m_window + comparison_len)))

    # Estimate mu on the step-fit region, shrunk a block on each side so
    # bookend bins cannot dilute the rates.
    region_start = coarse.fit_start + COARSE_BLOCK
    region_end = max(coarse.fit_end - COARSE_BLOCK, region_start + 2 * n)
    region_end = min(region_end, len(bob))
    region = bob.clicks[region_start:region_end]
    phase = estimate_phase(region, n, start=region_start)
    rates = gated_click_rates(bob, phase, region_start, region_end)
    rates = np.minimum(rates, 1.0 - 1e-12)
    mu_estimate = estimate_mu(
        rates,
        config.dark_prob_comm_bin,
        n_sampling=n,
        state_probabilities=config.state_probabilities,
    )
    mu_used = mu_estimate if mu_override is None else float(mu_override)

    table = build_detection_table(config, alpha_model, mu_received=mu_used)
    segment = alice.symbols[alice_start : alice_start + comparison_len]
    window = bob.clicks[window_start : window_start + comparison_len + m_window]
    counts = count_pairings(segment, window, n)
    log_num = log_likelihood_window(counts, table)
    post = posterior(log_num)
    best = int(np.argmax(post))
    return SyncResult(
        best_index=best,
        confidence=float(post[best]),
        posterior=post,
        window_start=window_start,
        mu_estimate=float(mu_estimate) if mu_override is None else float(mu_override),
    )


@dataclass(frozen=True)
class DriftFit:
    """Weighted least-squares line through per-batch offsets.

    ``slope`` is in sampling bins per batch; ``drift_ppm_estimate`` divides
    by the batch length to recover ``(tau_a - tau_b) / tau_a``.
    """

    slope: float
    intercept: float
    slope_stderr: float
    intercept_stderr: float
    residuals: tuple
    drift_ppm_estimate: float
    usable_batches: int


def batch_synchronize(
    alice: AliceString,
    bob: BobRecord,
    config: ProtocolConfig,
    batch_len: int,
    comparison_len: int,
    m_window: int = DEFAULT_M_WINDOW,
    alpha_model: float = 0.5,
    mu_override: float | None = None,
) -> tuple[list[SyncResult | None], DriftFit]:
    """Synchronize a long record in batches and fit the offset drift line.

    The transmitter string is cut into batches of ``batch_len`` sampling
    bins; each batch synchronizes its first ``comparison_len`` bins inside
    a window centered on the first batch's result (so the tolerated total
    drift is about half the window).  Batches that fail coarse estimation
    are reported as None and excluded from the fit.
    """
    n = config.n_sampling
    if batch_len % n != 0 or batch_len < comparison_len:
        raise ValueError(
            "batch_len must be a multiple of n and at least comparison_len"
        )
    n_batches = len(alice) // batch_len
    if n_batches < 2:
        raise ValueError(f"record spans {n_batches} batch(es); need at least 2")

    results: list[SyncResult | None] = []
    anchor: int | None = None
    for b in range(n_batches):
        alice_start = b * batch_len
        expected = None if anchor is None else anchor + alice_start
        try:
            res = synchronize(
                alice,
                bob,
                config,
                comparison_len,
                m_window=m_window,
                alpha_model=alpha_model,
                mu_override=mu_override,
                alice_start=alice_start,
                expected_offset=expected,
            )
        except Exception:
            results.append(None)
            continue
        results.append(res)
        if anchor is None:
            anchor = res.absolute_offset

    usable = [
        (b, res)
        for b, res in enumerate(results)
        if res is not None
    ]
    if len(usable) < 2:
        raise DriftFitUnavailable(
            f"only {len(usable)} batch(es) synchronized; need 2 for a drift fit"
        )

    x = np.array([b for b, _ in usable], dtype=float)
    # Offset of the batch's own first transmitted bin.
    y = np.array(
        [res.absolute_offset - b * batch_len for b, res in usable], dtype=float
    )
    # Posterior variance of the offset plus a half-bin quantization floor.
    weights = np.empty(len(usable))
    for k, (_, res) in enumerate(usable):
        idx = np.arange(len(res.posterior), dtype=float)
        mean = float(res.posterior @ idx)
        var = float(res.posterior @ (idx - mean) ** 2)
        weights[k] = 1.0 / (var + 1.0 / 12.0)

    sw = weights.sum()
    xbar = (weights * x).sum() / sw
    ybar = (weights * y).sum() / sw
    sxx = (weights * (x - xbar) ** 2).sum()
    if sxx <= 0:
        raise DriftFitUnavailable("batch indices are degenerate")
    slope = float((weights * (x - xbar) * (y - ybar)).sum() / sxx)
    intercept = float(ybar - slope * xbar)
    resid = y - (intercept + slope * x)
    dof = max(len(usable) - 2, 1)
    chi2red = max(float((weights * resid**2).sum() / dof), 1.0)
    slope_err = float(np.sqrt(chi2red / sxx))
    intercept_err = float(np.sqrt(chi2red * (1.0 / sw + xbar**2 / sxx)))
    fit = DriftFit(
        slope=slope,
        intercept=intercept,
        slope_stderr=slope_err,
        intercept_stderr=intercept_err,
        residuals=tuple(float(r) for r in resid),
        drift_ppm_estimate=slope / batch_len,
        usable_batches=len(usable),
    )
    return results, fit
