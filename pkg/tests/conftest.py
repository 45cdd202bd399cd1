import hypothesis
import numpy as np
import pytest

from qsync import ProtocolConfig, generate_alice, make_ground_truth, simulate_bob

hypothesis.settings.register_profile(
    "default", deadline=None, suppress_health_check=[hypothesis.HealthCheck.too_slow]
)
hypothesis.settings.load_profile("default")


@pytest.fixture
def config():
    return ProtocolConfig()


def make_session(
    mu,
    dark,
    comm_bins,
    seed,
    transmission_start=6000,
    post_pad=4096,
    alpha=0.5,
    drift_ppm=0.0,
):
    """Standard bookended session used across test modules."""
    cfg = ProtocolConfig(
        mu_a=1.0, eta=mu, dark_prob_comm_bin=dark, alpha=alpha, drift_ppm=drift_ppm
    )
    ss = np.random.SeedSequence([seed, 0xABCD])
    s_alice, s_bob = ss.spawn(2)
    alice = generate_alice(cfg, comm_bins, s_alice)
    truth = make_ground_truth(cfg, comm_bins, transmission_start)
    bob = simulate_bob(alice, cfg, truth, truth.transmission_end + post_pad, s_bob)
    return cfg, alice, truth, bob
