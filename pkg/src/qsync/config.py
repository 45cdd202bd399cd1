"""Protocol configuration: physical and timing parameters of one QKD session.

All times are expressed in units of the transmitter's communication bin
width ``tau_a`` unless stated otherwise.  The receiver samples ``n_sampling``
times per communication bin, so one "sampling bin" is ``tau_a / n_sampling``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError

#: Order of the per-symbol probabilities in ``state_probabilities``.
STATE_ORDER = ("H", "L", "R", "vacuum")

_PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ProtocolConfig:
    """Immutable bundle of every physical and protocol parameter.

    Attributes:
        tau_a: communication bin width in seconds (1.0 = normalized units).
        m: wavepacket duty-cycle divisor; the wavepacket lasts ``tau_a / m``.
        n_sampling: receiver sampling multiplier; sample period ``tau_a / n``.
        mu_a: transmitted signal mean photon number.
        eta: channel transmission in [0, 1]; received mu is ``eta * mu_a``.
        dark_prob_comm_bin: dark-count probability per detector per
            communication bin width.
        state_probabilities: probabilities of the transmitter symbols in
            ``STATE_ORDER``; must sum to 1.
        drift_ppm: fractional clock frequency mismatch between the two
            parties, ``(tau_a - tau_b) / tau_a``.
        t0_bins: initial clock offset, integer part in sampling bins.
        alpha: sub-bin straddle fraction in [0, 1); the fraction of the
            wavepacket falling into the trailing of its two sampling bins.
    """

    tau_a: float = 1.0
    m: int = 8
    n_sampling: int = 8
    mu_a: float = 1.0
    eta: float = 1.0
    dark_prob_comm_bin: float = 8e-4
    state_probabilities: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    drift_ppm: float = 0.0
    t0_bins: int = 0
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if self.tau_a <= 0:
            raise ConfigurationError(f"tau_a must be positive, got {self.tau_a}")
        if self.m < 1 or self.n_sampling < 1:
            raise ConfigurationError("m and n_sampling must be positive integers")
        if self.m != self.n_sampling:
            # The detection model ties the wavepacket duration to the sample
            # period; mismatched duty cycle and sampling are not modeled.
            raise ConfigurationError(
                f"unsupported configuration: m ({self.m}) != n_sampling "
                f"({self.n_sampling}); the model requires m == n"
            )
        if self.mu_a < 0:
            raise ConfigurationError(f"mu_a must be >= 0, got {self.mu_a}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigurationError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.dark_prob_comm_bin < 1.0:
            raise ConfigurationError(
                f"dark_prob_comm_bin must lie in [0, 1), got {self.dark_prob_comm_bin}"
            )
        probs = tuple(float(p) for p in self.state_probabilities)
        if len(probs) != 4:
            raise ConfigurationError(
                f"state_probabilities needs exactly 4 entries ({'/'.join(STATE_ORDER)})"
            )
        if any(p < 0 for p in probs):
            raise ConfigurationError("state_probabilities must be non-negative")
        if abs(sum(probs) - 1.0) > _PROB_SUM_TOL:
            raise ConfigurationError(
                f"state_probabilities must sum to 1, got {sum(probs)!r}"
            )
        object.__setattr__(self, "state_probabilities", probs)
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1), got {self.alpha}")

    @property
    def mu_received(self) -> float:
        """Mean photon number arriving at the receiver, ``eta * mu_a``."""
        return self.eta * self.mu_a

    @property
    def dark_prob_sampling_bin(self) -> float:
        """Dark probability per sampling bin under Bernoulli thinning.

        ``d_s = 1 - (1 - d)**(1/n)`` so that n independent sampling bins
        compose back to the per-communication-bin probability d.
        """
        return -math.expm1(math.log1p(-self.dark_prob_comm_bin) / self.n_sampling)

    def replace(self, **changes) -> "ProtocolConfig":
        """Return a copy with the given fields replaced (re-validated)."""
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "tau_a": self.tau_a,
            "m": self.m,
            "n_sampling": self.n_sampling,
            "mu_a": self.mu_a,
            "eta": self.eta,
            "dark_prob_comm_bin": self.dark_prob_comm_bin,
            "state_probabilities": list(self.state_probabilities),
            "drift_ppm": self.drift_ppm,
            "t0_bins": self.t0_bins,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "state_probabilities" in data:
            data = dict(data)
            data["state_probabilities"] = tuple(data["state_probabilities"])
        return cls(**data)


_INT_KEYS = {"m", "n_sampling", "t0_bins"}
_FLOAT_KEYS = {"tau_a", "mu_a", "eta", "dark_prob_comm_bin", "drift_ppm", "alpha"}


def parse_config_text(text: str, source: str = "<config>") -> ProtocolConfig:
    """Parse the flat ``key = value`` configuration format.

    Blank lines and ``#`` comments are ignored.  ``state_probabilities``
    takes four comma-separated floats.  Errors carry the offending line
    number so the CLI can point at it.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(
                f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}"
            )
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key == "state_probabilities":
                values[key] = tuple(float(p) for p in value.split(","))
            else:
                raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigurationError(
                f"{source}:{lineno}: bad value for {key!r}: {value!r} ({exc})"
            ) from None
    try:
        return ProtocolConfig.from_dict(values)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None


def load_config(path: str | Path) -> ProtocolConfig:
    """Read a configuration file; see :func:`parse_config_text` for the format."""
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def config_text(config: ProtocolConfig) -> str:
    """Render a config back to the flat file format (roundtrips via parse)."""
    lines = []
    for key, value in config.to_dict().items():
        if key == "state_probabilities":
            value = ", ".join(repr(p) for p in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
