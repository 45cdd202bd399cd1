"""Session persistence: a versioned little-endian binary container.

Layout (all integers little-endian):

    magic   5 bytes  b"QSESS"
    version u16      currently 1
    cfglen  u32      length of the UTF-8 JSON config echo
    config  cfglen bytes
    truth   i64 true_offset_bins, f64 alpha, f64 drift_ppm,
            i64 transmission_start, i64 transmission_end
    nalice  u64      transmitter slots
    alice   nalice bytes, one symbol code per sampling slot
    nbob    u64      receiver sampling bins
    bob     nbob bytes, low 4 bits = detectors HVLR (bit0=H .. bit3=R)

The CSV export lists one row per receiver bin with the detector outcomes
and, where the bin falls inside the transmission, the transmitter symbol
that nominally occupies it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ProtocolConfig
from .detection import AliceSymbol
from .errors import SessionFormatError
from .session import AliceString, BobRecord, GroundTruth

__all__ = ["write_session", "read_session", "export_csv", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"QSESS"
FORMAT_VERSION = 1

_TRUTH_STRUCT = struct.Struct("<qddqq")


def _pack_clicks(clicks: np.ndarray) -> np.ndarray:
    bits = clicks.astype(np.uint8)
    return bits[:, 0] | (bits[:, 1] << 1) | (bits[:, 2] << 2) | (bits[:, 3] << 3)


def _unpack_clicks(packed: np.ndarray) -> np.ndarray:
    return np.stack([(packed >> k) & 1 for k in range(4)], axis=1).astype(bool)


def write_session(
    path,
    config: ProtocolConfig,
    truth: GroundTruth,
    alice: AliceString,
    bob: BobRecord,
) -> None:
    config_blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        struct.pack("<I", len(config_blob)),
        config_blob,
        _TRUTH_STRUCT.pack(
            truth.true_offset_bins,
            truth.alpha,
            truth.drift_ppm,
            truth.transmission_start,
            truth.transmission_end,
        ),
        struct.pack("<Q", len(alice.symbols)),
        alice.symbols.astype(np.uint8).tobytes(),
        struct.pack("<Q", len(bob.clicks)),
        _pack_clicks(bob.clicks).tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise SessionFormatError(f"{self.source}: truncated session file")
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk


def read_session(path) -> tuple[ProtocolConfig, GroundTruth, AliceString, BobRecord]:
    path = Path(path)
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(len(MAGIC)) != MAGIC:
        raise SessionFormatError(f"{path}: not a session file (bad magic)")
    (version,) = struct.unpack("<H", reader.take(2))
    if version != FORMAT_VERSION:
        raise SessionFormatError(f"{path}: unsupported session version {version}")
    (cfglen,) = struct.unpack("<I", reader.take(4))
    try:
        config = ProtocolConfig.from_dict(json.loads(reader.take(cfglen)))
    except (ValueError, TypeError) as exc:
        raise SessionFormatError(f"{path}: bad config echo: {exc}") from None
    truth = GroundTruth(*_TRUTH_STRUCT.unpack(reader.take(_TRUTH_STRUCT.size)))
    (nalice,) = struct.unpack("<Q", reader.take(8))
    symbols = np.frombuffer(reader.take(int(nalice)), dtype=np.uint8).copy()
    if np.any(symbols > max(AliceSymbol)):
        raise SessionFormatError(f"{path}: invalid transmitter symbol code")
    (nbob,) = struct.unpack("<Q", reader.take(8))
    packed = np.frombuffer(reader.take(int(nbob)), dtype=np.uint8)
    if np.any(packed > 0x0F):
        raise SessionFormatError(f"{path}: invalid detector bitmask")
    if reader.pos != len(reader.data):
        raise SessionFormatError(f"{path}: trailing bytes after session payload")
    alice = AliceString(symbols=symbols, n=config.n_sampling)
    bob = BobRecord(clicks=_unpack_clicks(packed), n=config.n_sampling)
    return config, truth, alice, bob


def export_csv(path, truth: GroundTruth, alice: AliceString, bob: BobRecord) -> None:
    """Human-readable dump: one row per receiver bin."""
    names = {int(s): s.name for s in AliceSymbol}
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        handle.write("bin_index,det_H,det_V,det_L,det_R,alice_symbol\n")
        start = truth.transmission_start
        for k, row in enumerate(bob.clicks.astype(int)):
            i = k - start
            symbol = names[int(alice.symbols[i])] if 0 <= i < len(alice.symbols) else ""
            handle.write(f"{k},{row[0]},{row[1]},{row[2]},{row[3]},{symbol}\n")
