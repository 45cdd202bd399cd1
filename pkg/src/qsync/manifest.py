"""Run manifests: reproducibility metadata written next to every artifact."""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

from .config import ProtocolConfig

__all__ = ["RunManifest", "sha256_file", "config_hash"]


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: ProtocolConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """Collects run metadata and output hashes, then writes itself as JSON."""

    def __init__(self, subcommand: str, config: ProtocolConfig, seed: int | None):
        from . import __version__

        self.payload = {
            "tool": "qsync",
            "tool_version": __version__,
            "subcommand": subcommand,
            "config": config.to_dict(),
            "config_sha256": config_hash(config),
            "seed": seed,
            "started": _utcnow(),
            "finished": None,
            "outputs": [],
            "extra": {},
        }

    def add_output(self, path) -> None:
        path = Path(path)
        self.payload["outputs"].append(
            {"path": str(path), "sha256": sha256_file(path), "bytes": path.stat().st_size}
        )

    def note(self, key: str, value) -> None:
        self.payload["extra"][key] = value

    def write(self, path) -> None:
        self.payload["finished"] = _utcnow()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            json.dump(self.payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
