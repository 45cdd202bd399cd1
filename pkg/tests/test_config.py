import pytest

from qsync import ConfigurationError, ProtocolConfig
from qsync.config import config_text, parse_config_text


def test_defaults_match_model_system():
    cfg = ProtocolConfig()
    assert cfg.m == cfg.n_sampling == 8
    assert cfg.dark_prob_comm_bin == 8e-4
    assert cfg.state_probabilities == (0.25, 0.25, 0.25, 0.25)


def test_mismatched_duty_cycle_rejected():
    with pytest.raises(ConfigurationError, match="m .* n_sampling"):
        ProtocolConfig(m=8, n_sampling=16)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"eta": 1.5},
        {"eta": -0.1},
        {"mu_a": -1.0},
        {"dark_prob_comm_bin": 1.0},
        {"dark_prob_comm_bin": -1e-9},
        {"alpha": 1.0},
        {"state_probabilities": (0.5, 0.5, 0.5, -0.5)},
        {"state_probabilities": (0.3, 0.3, 0.3, 0.3)},
        {"state_probabilities": (0.5, 0.5)},
        {"tau_a": 0.0},
    ],
)
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        ProtocolConfig(**kwargs)


def test_state_probabilities_sum_tolerance():
    probs = (0.25, 0.25, 0.25, 0.25 + 5e-13)
    cfg = ProtocolConfig(state_probabilities=probs)
    assert abs(sum(cfg.state_probabilities) - 1.0) < 1e-11


def test_dark_prob_sampling_bin_composes_back():
    cfg = ProtocolConfig(dark_prob_comm_bin=8e-4)
    d_s = cfg.dark_prob_sampling_bin
    assert (1 - d_s) ** cfg.n_sampling == pytest.approx(1 - 8e-4, rel=1e-14)


def test_parse_roundtrip():
    cfg = ProtocolConfig(eta=0.05, t0_bins=1234, alpha=0.25, drift_ppm=1.5e-5)
    again = parse_config_text(config_text(cfg))
    assert again == cfg


def test_parse_reports_line_numbers():
    text = "eta = 0.5\nnot a key value pair\n"
    with pytest.raises(ConfigurationError, match=":2:"):
        parse_config_text(text, source="test.cfg")
    with pytest.raises(ConfigurationError, match="unknown key"):
        parse_config_text("bogus = 1\n")
    with pytest.raises(ConfigurationError, match="duplicate"):
        parse_config_text("eta = 0.5\neta = 0.6\n")
    with pytest.raises(ConfigurationError, match="bad value"):
        parse_config_text("eta = abc\n")


def test_parse_comments_and_blanks():
    cfg = parse_config_text("# comment\n\neta = 0.25  # received fraction\n")
    assert cfg.eta == 0.25


def test_replace_revalidates():
    cfg = ProtocolConfig()
    with pytest.raises(ConfigurationError):
        cfg.replace(eta=2.0)
