"""Deterministic random streams.

One master seed fans out into independent named streams (weight init,
negative-label sampling, data shuffling, ...). Streams are built from
numpy's PCG64 generator, seeded through a SeedSequence with an explicit
spawn key per role, so the same master seed reproduces every stream
bitwise and no stream depends on how often another one was consumed.
The platform-default global generator is never used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Fixed role -> spawn-key map. Append only; reordering changes every stream.
STREAM_ROLES = {
    "weight_init": 0,
    "negative_labels": 1,
    "shuffle": 2,
    "subset": 3,
    "synthetic": 4,
}


def stream(seed: int, role: str, extra: tuple[int, ...] = ()) -> np.random.Generator:
    """Independent generator for one named role under a master seed."""
    if role not in STREAM_ROLES:
        raise ValueError(f"unknown rng role {role!r}; expected one of {sorted(STREAM_ROLES)}")
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(STREAM_ROLES[role], *extra))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass
class TrainingStreams:
    """The generator bundle a training run owns (single-owner, not shared)."""

    weight_init: np.random.Generator
    negative_labels: np.random.Generator
    shuffle: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "TrainingStreams":
        return cls(
            weight_init=stream(seed, "weight_init"),
            negative_labels=stream(seed, "negative_labels"),
            shuffle=stream(seed, "shuffle"),
        )
