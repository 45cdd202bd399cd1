import numpy as np
import pytest

from conftest import make_session
from qsync import (
    AliceSymbol,
    CoarseEstimationFailed,
    ProtocolConfig,
    build_detection_table,
    coarse_estimate,
    generate_alice,
    make_ground_truth,
    simulate_bob,
    synchronize,
)
from qsync.session import BobRecord, GroundTruth, drift_slips


class TestGenerateAlice:
    def test_duty_cycle_structure(self, config):
        alice = generate_alice(config, 4, rng_seed=3)
        assert len(alice.symbols) == 32
        non_idle = np.flatnonzero(alice.symbols != AliceSymbol.IDLE)
        assert len(non_idle) == 4
        assert np.all(non_idle % 8 == 0)

    def test_symbol_frequencies_within_binomial_bound(self, config):
        comm_bins = 10**5
        alice = generate_alice(config, comm_bins, rng_seed=5)
        symbols = alice.comm_symbols()
        sigma = np.sqrt(0.25 * 0.75 / comm_bins)
        for s in (AliceSymbol.H, AliceSymbol.L, AliceSymbol.R, AliceSymbol.VACUUM):
            assert abs((symbols == s).mean() - 0.25) < 5 * sigma

    def test_deterministic_for_fixed_seed(self, config):
        a = generate_alice(config, 1000, rng_seed=9)
        b = generate_alice(config, 1000, rng_seed=9)
        np.testing.assert_array_equal(a.symbols, b.symbols)

    def test_zero_length_rejected(self, config):
        with pytest.raises(ValueError):
            generate_alice(config, 0, rng_seed=1)

    def test_biased_mix(self):
        cfg = ProtocolConfig(state_probabilities=(1.0, 0.0, 0.0, 0.0))
        alice = generate_alice(cfg, 100, rng_seed=1)
        assert np.all(alice.comm_symbols() == AliceSymbol.H)


class TestSimulateBob:
    def test_all_vacuum_no_dark_is_silent(self):
        cfg = ProtocolConfig(
            dark_prob_comm_bin=0.0, state_probabilities=(0.0, 0.0, 0.0, 1.0)
        )
        alice = generate_alice(cfg, 500, rng_seed=2)
        truth = make_ground_truth(cfg, 500, 100)
        bob = simulate_bob(alice, cfg, truth, truth.transmission_end + 64, rng_seed=3)
        assert not bob.clicks.any()

    def test_occupied_rates_match_table(self):
        mu, d = 1.0, 8e-4
        cfg, alice, truth, bob = make_session(mu, d, 10**5, seed=21)
        table = build_detection_table(cfg, alpha=cfg.alpha)
        comm = np.arange(alice.comm_bins)
        lead = truth.transmission_start + comm * cfg.n_sampling
        for role, positions in ((0, lead), (1, lead + 1)):
            rates = bob.clicks[positions].mean(axis=0)
            expected = table.p_uninformed[role]
            sigma = np.sqrt(expected * (1 - expected) / len(positions))
            assert np.all(np.abs(rates - expected) < 3 * sigma)

    def test_sparsity_at_paper_parameters(self):
        _, _, _, bob = make_session(1.0, 8e-4, 20000, seed=22)
        assert bob.click_fraction < 0.15

    def test_bookends_contain_dark_counts_only(self):
        cfg, alice, truth, bob = make_session(1.0, 8e-4, 20000, seed=23)
        d_s = cfg.dark_prob_sampling_bin
        pre = bob.clicks[: truth.transmission_start]
        post = bob.clicks[truth.transmission_end + 1 :]
        for region in (pre, post):
            rate = region.mean()
            sigma = np.sqrt(d_s * (1 - d_s) / region.size)
            assert abs(rate - d_s) < 4 * sigma

    def test_record_too_short_rejected(self, config):
        alice = generate_alice(config, 100, rng_seed=1)
        truth = make_ground_truth(config, 100, 50)
        with pytest.raises(ValueError):
            simulate_bob(alice, config, truth, truth.transmission_end, rng_seed=1)

    def test_drift_slips_shift_second_half(self):
        # 1 sampling-bin slip per 1e4 communication bins
        drift = 1e-4 / 8
        comm_bins = 2 * 10**4
        cfg, alice, truth, bob = make_session(
            0.2, 8e-4, comm_bins, seed=24, drift_ppm=drift
        )
        n = cfg.n_sampling
        half = comm_bins // 2 * n
        first = synchronize(
            alice, bob, cfg, 8000, alice_start=0,
            expected_offset=truth.transmission_start,
        )
        second = synchronize(
            alice, bob, cfg, 8000, alice_start=half,
            expected_offset=truth.transmission_start + half,
        )
        first_offset = first.absolute_offset
        second_offset = second.absolute_offset - half
        assert second_offset == first_offset + 1


class TestDriftSlips:
    def test_zero_drift_never_slips(self, config):
        assert not drift_slips(config, 1000).any()

    def test_one_bin_per_1e4_comm_bins(self):
        cfg = ProtocolConfig(drift_ppm=1e-4 / 8)
        slips = drift_slips(cfg, 2 * 10**4)
        assert slips[9999] == 0
        assert slips[10000] == 1
        assert slips[19999] == 1

    def test_ground_truth_consistency(self):
        with pytest.raises(ValueError):
            GroundTruth(
                true_offset_bins=5, alpha=0.5, drift_ppm=0.0,
                transmission_start=6, transmission_end=100,
            )


class TestCoarseEstimate:
    def test_window_contains_truth_at_mu_1(self):
        hits = 0
        for seed in range(100):
            cfg, alice, truth, bob = make_session(1.0, 8e-4, 1200, seed=seed)
            cw = coarse_estimate(
                bob,
                expected_width=len(alice),
                dark_rate_per_bin=cfg.dark_prob_sampling_bin,
            )
            hits += (
                cw.window_start
                <= truth.true_offset_bins
                < cw.window_start + cw.m_window
            )
        assert hits >= 99

    def test_all_dark_record_fails(self, config):
        rng = np.random.default_rng(31)
        clicks = rng.random((40000, 4)) < config.dark_prob_sampling_bin
        bob = BobRecord(clicks=clicks, n=config.n_sampling)
        with pytest.raises(CoarseEstimationFailed):
            coarse_estimate(bob, dark_rate_per_bin=config.dark_prob_sampling_bin)
        with pytest.raises(CoarseEstimationFailed):
            coarse_estimate(bob)

    def test_empty_record_fails(self, config):
        bob = BobRecord(clicks=np.zeros((40000, 4), dtype=bool), n=8)
        with pytest.raises(CoarseEstimationFailed, match="no clicks"):
            coarse_estimate(bob)

    def test_noise_free_step_located_within_block(self, config):
        clicks = np.zeros((60000, 4), dtype=bool)
        start, end = 17321, 43000
        clicks[start:end, 0] = True
        bob = BobRecord(clicks=clicks, n=config.n_sampling)
        for kwargs in ({}, {"expected_width": end - start}):
            cw = coarse_estimate(bob, **kwargs)
            assert abs(cw.fit_start - start) <= 512
            assert cw.window_start == cw.fit_start - cw.m_window // 2

    def test_record_too_short(self, config):
        bob = BobRecord(clicks=np.ones((1024, 4), dtype=bool), n=8)
        with pytest.raises(CoarseEstimationFailed, match="too short"):
            coarse_estimate(bob)


class TestReproducibility:
    def test_session_fully_determined_by_seeds(self):
        a = make_session(0.3, 8e-4, 5000, seed=77)
        b = make_session(0.3, 8e-4, 5000, seed=77)
        np.testing.assert_array_equal(a[1].symbols, b[1].symbols)
        np.testing.assert_array_equal(a[3].clicks, b[3].clicks)
        assert a[2] == b[2]
