"""Run provenance: the per-run metrics record and the semantic config hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field


def config_hash(semantics: dict) -> str:
    """Stable 64-bit hash of a semantic config dict (no paths belong in here)."""
    blob = json.dumps(semantics, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class MetricsRecord:
    """One training run's results plus provenance. Append-only."""

    config_hash: str
    seed: int
    layer_final_losses: list = field(default_factory=list)
    layer_loss_traces: list = field(default_factory=list)
    train_accuracy: float | None = None
    test_accuracy: float | None = None
    wall_clock_seconds: float | None = None
    sweep_axis: str = "none"
    sweep_value: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsRecord":
        return cls(**d)
