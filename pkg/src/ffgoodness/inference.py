"""Multi-pass label-conditioned scoring and accuracy.

Each candidate class is forwarded through the whole network exactly the way
training saw it (embedding or per-layer label injection, activation, gate,
inter-layer L2 normalization) and scored by the summed per-layer goodness
plus the goodness of the concatenated layer activations. Read-only: no
random numbers, goodness state frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .goodness import goodness_eval
from .training import Network, TrainConfig, layer_stages, network_input
from .numerics import l2_normalize


@dataclass
class ScoreTable:
    """Per-class summed goodness and the resulting predictions."""

    scores: np.ndarray       # (N, C)
    predictions: np.ndarray  # (N,) argmax per row, ties to the lowest class

    def __post_init__(self):
        if self.scores.ndim != 2:
            raise ValueError("scores must be (N, C)")
        if self.predictions.shape != (self.scores.shape[0],):
            raise ValueError("one prediction per score row required")


def _std_class_activations(net: Network, x_batch: np.ndarray, cls: int) -> list:
    cfg = net.config
    labels = np.full(x_batch.shape[0], cls, dtype=np.int64)
    h = network_input(cfg, x_batch, labels)
    collected = []
    for layer in net.layers:
        _, _, out = layer_stages(layer, h, cfg.activation, cfg.norm_gate)
        collected.append(out)
        h = l2_normalize(out)
    return collected


def _ffcl_class_activations(net: Network, x_batch: np.ndarray, cls: int) -> list:
    cfg = net.config
    h = network_input(cfg, x_batch)
    collected = []
    for layer in net.layers:
        _, _, h_free = layer_stages(layer, h, cfg.activation, cfg.norm_gate)
        collected.append(h_free + layer.label_weight[:, cls][None, :])
        h = l2_normalize(h_free)
    return collected


def score_all_classes(net: Network, x_batch: np.ndarray,
                      cfg: TrainConfig | None = None) -> ScoreTable:
    """Goodness total per (sample, candidate class) plus argmax predictions.

    The ensemble term uses the same post-activation (label-injected for the
    ffcl pathway) vectors whose per-layer goodness is summed; with
    skip_first_layer_score the first layer is dropped from both.
    """
    cfg = cfg or net.config
    if not net.layers:
        raise RuntimeError("network has no layers")
    x_batch = np.asarray(x_batch, dtype=np.float64)
    if x_batch.ndim != 2 or x_batch.shape[1] != net.input_dim:
        raise RuntimeError(f"expected inputs of shape (N, {net.input_dim}), "
                           f"got {x_batch.shape}")
    n = x_batch.shape[0]
    scores = np.zeros((n, cfg.num_classes))
    first = 1 if (cfg.skip_first_layer_score and net.num_layers > 1) else 0
    for cls in range(cfg.num_classes):
        if cfg.pathway == "std":
            acts = _std_class_activations(net, x_batch, cls)
        else:
            acts = _ffcl_class_activations(net, x_batch, cls)
        acts = acts[first:]
        total = np.zeros(n)
        for h, state in zip(acts, net.goodness_states[first:]):
            total += goodness_eval(cfg.goodness, h, state, training=False)
        concat = np.hstack(acts)
        total += goodness_eval(cfg.goodness, concat, net.goodness_states[-1], training=False)
        scores[:, cls] = total
    predictions = scores.argmax(axis=1)
    return ScoreTable(scores=scores, predictions=predictions)


def accuracy(table: ScoreTable, labels) -> float:
    """Fraction of predictions matching the labels, in [0, 1]."""
    labels = np.asarray(labels)
    if labels.shape != table.predictions.shape:
        raise ValueError(f"{table.predictions.shape[0]} predictions vs "
                         f"{labels.shape[0]} labels")
    return float(np.mean(table.predictions == labels))
