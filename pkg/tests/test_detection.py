import numpy as np
import pytest
from hypothesis import given, strategies as st

from qsync import (
    AliceSymbol,
    ConfigurationError,
    ProtocolConfig,
    build_detection_table,
    click_probability,
    estimate_mu,
    invert_click_probability,
    sort_photons,
)
from qsync.detection import SIGNAL_SYMBOLS, SORT_FRACTIONS


class TestClickProbability:
    def test_vacuum_gives_dark_counts_only(self):
        assert click_probability(0.0, 1e-4) == pytest.approx(1e-4, rel=1e-12)

    def test_direct_evaluation(self):
        # 1 - exp(-0.4), cross-checked against Poisson P(k >= 1)
        assert click_probability(0.4, 0.0) == pytest.approx(0.3296799539643607, abs=1e-15)
        # 1 - 0.9999 * exp(-0.2); Monte-Carlo oracle agreed at +0.25 sigma
        # over 1e7 Bernoulli-dark + Poisson-photon draws (seed 42).
        assert click_probability(0.2, 1e-4) == pytest.approx(0.181351119997326, abs=1e-15)

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(42)
        n = 10**6
        clicks = ((rng.random(n) < 1e-4) | (rng.poisson(0.2, n) > 0)).mean()
        p = click_probability(0.2, 1e-4)
        sigma = np.sqrt(p * (1 - p) / n)
        assert abs(clicks - p) < 3 * sigma

    @given(
        st.floats(0.0, 10.0),
        st.floats(0.0, 10.0),
        st.floats(0.0, 0.5),
        st.floats(0.0, 0.4),
    )
    def test_monotone_in_both_arguments(self, mu, dmu, d, dd):
        base = click_probability(mu, d)
        assert click_probability(mu + dmu, d) >= base
        assert click_probability(mu, d + dd) >= base

    def test_limits(self):
        assert click_probability(0.0, 0.25) == pytest.approx(0.25)
        assert click_probability(800.0, 0.0) == pytest.approx(1.0)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            click_probability(-0.1, 0.0)
        with pytest.raises(ValueError):
            click_probability(0.1, 1.0)
        with pytest.raises(ValueError):
            click_probability(0.1, -0.1)


class TestInvertClickProbability:
    def test_clicks_at_dark_rate_mean_vacuum(self):
        assert invert_click_probability(1e-4, 1e-4) == pytest.approx(0.0, abs=1e-15)

    def test_direct_evaluation(self):
        p = 0.3934693402873666  # 1 - exp(-0.5)
        assert invert_click_probability(p, 0.0) == pytest.approx(0.5, abs=1e-12)

    @given(st.floats(0.0, 10.0), st.floats(0.0, 0.01))
    def test_roundtrip(self, mu, d):
        p = click_probability(mu, d)
        assert invert_click_probability(p, d) == pytest.approx(mu, abs=1e-12, rel=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            invert_click_probability(5e-5, 1e-4)
        with pytest.raises(ValueError):
            invert_click_probability(1.0, 0.0)


class TestSortPhotons:
    def test_h_worked_example(self):
        np.testing.assert_array_equal(
            sort_photons(AliceSymbol.H, 0.8), np.array([0.4, 0.0, 0.2, 0.2])
        )

    def test_vacuum_and_idle_are_dark(self):
        for symbol in (AliceSymbol.VACUUM, AliceSymbol.IDLE):
            np.testing.assert_array_equal(sort_photons(symbol, 1.7), np.zeros(4))

    def test_l_by_symmetry(self):
        # Verified against a two-stage sampling oracle (basis choice, then
        # projection) with 1e7 Poisson(0.4) wavepackets: (0.0999, 0.1001,
        # 0.1999, 0.0).
        np.testing.assert_allclose(
            sort_photons(AliceSymbol.L, 0.4), [0.1, 0.1, 0.2, 0.0], atol=1e-15
        )

    def test_two_stage_sampling_oracle(self):
        rng = np.random.default_rng(7)
        n = 10**6
        total = int(rng.poisson(0.4, n).sum())
        same_basis = rng.random(total) < 0.5
        projection = rng.random(total) < 0.5
        det = np.where(same_basis, 2, np.where(projection, 0, 1))
        rates = np.bincount(det, minlength=4) / n
        expected = sort_photons(AliceSymbol.L, 0.4)
        sigma = np.sqrt(0.4 / n) * 2  # generous per-detector bound
        assert np.all(np.abs(rates - expected) < 3 * sigma)

    @given(
        st.sampled_from(list(AliceSymbol)),
        st.floats(0.0, 100.0, allow_nan=False),
    )
    def test_conserves_total(self, symbol, mu):
        out = sort_photons(symbol, mu)
        expected = 0.0 if symbol in (AliceSymbol.VACUUM, AliceSymbol.IDLE) else mu
        assert out.sum() == pytest.approx(expected, rel=1e-12, abs=1e-12)
        assert np.all(out >= 0)

    def test_v_detector_never_same_basis(self):
        # V is never transmitted, so no symbol routes half its photons to V.
        assert all(SORT_FRACTIONS[int(s), 1] < 0.5 for s in SIGNAL_SYMBOLS)

    def test_negative_mu_rejected(self):
        with pytest.raises(ValueError):
            sort_photons(AliceSymbol.H, -0.1)


class TestDetectionTable:
    def test_whole_packet_in_leading_bin(self):
        cfg = ProtocolConfig(mu_a=1.0, eta=0.8, dark_prob_comm_bin=0.0)
        table = build_detection_table(cfg, alpha=0.0)
        # sort_photons(H, 0.8) composed with click_probability
        assert table.p_signal[AliceSymbol.H, 0, 0] == pytest.approx(
            0.3296799539643607, abs=1e-12
        )
        # alpha = 0: trailing bin holds no signal, only (clamped) dark
        assert table.p_signal[AliceSymbol.H, 1, 0] <= 1e-15

    def test_idle_rows_are_dark(self, config):
        table = build_detection_table(config, alpha=0.5)
        d_s = config.dark_prob_sampling_bin
        np.testing.assert_allclose(table.p_signal[AliceSymbol.IDLE], d_s, rtol=1e-12)
        assert table.p_idle == pytest.approx(d_s, rel=1e-12)

    def test_marginalization_identity(self, config):
        table = build_detection_table(config, alpha=0.3)
        weights = np.asarray(config.state_probabilities)
        rows = [int(s) for s in SIGNAL_SYMBOLS]
        expected = np.einsum("s,srl->rl", weights, table.p_signal[rows])
        np.testing.assert_allclose(table.p_uninformed, expected, atol=1e-12)

    def test_uninformed_equal_mix_is_plain_mean(self, config):
        table = build_detection_table(config, alpha=0.5)
        rows = [int(s) for s in SIGNAL_SYMBOLS]
        np.testing.assert_allclose(
            table.p_uninformed, table.p_signal[rows].mean(axis=0), atol=1e-12
        )

    def test_log_entries_match_linear(self, config):
        table = build_detection_table(config, alpha=0.5)
        np.testing.assert_allclose(
            table.log_p_signal, np.log(table.p_signal), atol=1e-14
        )
        np.testing.assert_allclose(
            table.log1m_p_signal, np.log(1 - table.p_signal), atol=1e-14
        )
        np.testing.assert_allclose(
            table.log_p_uninformed, np.log(table.p_uninformed), atol=1e-14
        )

    def test_probabilities_clamped_strictly_inside_unit_interval(self):
        cfg = ProtocolConfig(dark_prob_comm_bin=0.0)
        table = build_detection_table(cfg, alpha=0.5)
        assert np.all(table.p_signal > 0)
        assert np.all(table.p_signal < 1)
        assert np.isfinite(table.log_p_signal).all()

    def test_detector_efficiency_scales_mu(self, config):
        table = build_detection_table(config, 0.0, detector_efficiency=(0.5, 1, 1, 1))
        full = build_detection_table(config, 0.0)
        mu_h = invert_click_probability(
            float(table.p_signal[AliceSymbol.H, 0, 0]), config.dark_prob_sampling_bin
        )
        mu_h_full = invert_click_probability(
            float(full.p_signal[AliceSymbol.H, 0, 0]), config.dark_prob_sampling_bin
        )
        assert mu_h == pytest.approx(0.5 * mu_h_full, rel=1e-9)

    def test_invalid_alpha_rejected(self, config):
        with pytest.raises(ConfigurationError):
            build_detection_table(config, alpha=1.0)

    def test_mu_override(self, config):
        table = build_detection_table(config, 0.5, mu_received=0.2)
        assert table.mu_received == 0.2


class TestEstimateMu:
    def test_dark_only_rates_give_zero(self):
        d = 8e-4
        d_window = 1 - (1 - d) ** (2 / 8)
        assert estimate_mu([d_window] * 4, d) == 0.0

    def test_noiseless_analytic_rates(self):
        # Expected per-detector click rates over the gated two-bin window
        # at mu = 0.05, equal state mix.
        mu, d = 0.05, 8e-4
        surv_dark = (1 - d) ** (2 / 8)
        rates = [
            1 - surv_dark * np.mean([np.exp(-SORT_FRACTIONS[int(s), det] * mu) for s in SIGNAL_SYMBOLS])
            for det in range(4)
        ]
        assert estimate_mu(rates, d) == pytest.approx(mu, abs=1e-9)

    def test_low_mu_limit_matches_four_thirds_rule(self):
        # The mixture inversion reduces to (4/3) * sum of per-detector
        # inversions as mu -> 0.
        mu, d = 1e-6, 8e-4
        surv_dark = (1 - d) ** (2 / 8)
        rates = np.array(
            [
                1 - surv_dark * np.mean([np.exp(-SORT_FRACTIONS[int(s), det] * mu) for s in SIGNAL_SYMBOLS])
                for det in range(4)
            ]
        )
        plain = (4.0 / 3.0) * np.sum(np.log((1 - d) ** (2 / 8)) - np.log1p(-rates))
        assert estimate_mu(rates, d) == pytest.approx(plain, rel=1e-4)

    def test_monte_carlo_session(self, monte_carlo_mu_result):
        mu_hat, sigma = monte_carlo_mu_result
        assert abs(mu_hat - 0.1) < 3 * sigma

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            estimate_mu([0.1, 0.1, 0.1], 8e-4)
        with pytest.raises(ValueError):
            estimate_mu([0.1, 0.1, 0.1, 1.0], 8e-4)
        with pytest.raises(ValueError):
            estimate_mu([0.1, 0.1, 0.1, -0.1], 8e-4)
        with pytest.raises(ValueError):
            estimate_mu([0.1] * 4, 1.0)


@pytest.fixture(scope="module")
def monte_carlo_mu_result():
    """Estimate mu on a simulated 1e6-communication-bin session.

    The statistical sigma comes from splitting the session into 16 blocks
    and taking the spread of the per-block estimates.
    """
    from conftest import make_session
    from qsync.sync import gated_click_rates

    mu, d = 0.1, 8e-4
    comm_bins = 10**6
    cfg, alice, truth, bob = make_session(
        mu, d, comm_bins, seed=11, transmission_start=0, post_pad=16
    )
    n = cfg.n_sampling
    phase = truth.transmission_start % n
    start, end = truth.transmission_start, truth.transmission_end + 1

    rates = gated_click_rates(bob, phase, start, end)
    mu_hat = estimate_mu(rates, d)

    blocks = 16
    span = (end - start) // blocks // n * n
    estimates = []
    for b in range(blocks):
        s = start + b * span
        estimates.append(estimate_mu(gated_click_rates(bob, phase, s, s + span), d))
    sigma = float(np.std(estimates, ddof=1) / np.sqrt(blocks))
    return mu_hat, sigma
