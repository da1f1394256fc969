"""Layer-local training: input embedding, the threshold loss, both label pathways.

Layers are trained strictly one at a time: a layer runs all of its epochs
against the frozen output of the layers below it, then is frozen itself.
Each mini-batch contrasts a positive copy of the images (true labels) with a
negative copy (random wrong labels); the per-layer loss pushes the goodness
of positive activations above a threshold and negative ones below it.

Two label pathways are supported:

    std   labels are embedded into the input vector only (scaled one-hot
          block appended to the image, then L2-normalized);
    ffcl  the raw image enters the network and every layer adds a learned
          label projection on top of its label-free features; goodness is
          computed on the label-injected activations while only the
          label-free ones (L2-normalized) propagate.

All gradients are analytic; there is no autodiff anywhere.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .goodness import GoodnessSpec, GoodnessState, goodness_eval, goodness_grad
from .layers import (LayerParams, NumericalError, activation_backward,
                     activation_forward, adam_step, init_layer, norm_gate,
                     norm_gate_backward, ACTIVATION_KINDS)
from .numerics import l2_normalize, sigmoid, softplus_stable
from .records import MetricsRecord, config_hash
from .rng import TrainingStreams

PATHWAYS = ("std", "ffcl")


@dataclass
class TrainConfig:
    """Architecture, objective and optimization hyperparameters for one run."""

    layer_widths: list = field(default_factory=lambda: [500, 500])
    activation: str = "relu"
    goodness: GoodnessSpec = field(default_factory=lambda: GoodnessSpec("sos"))
    pathway: str = "std"
    norm_gate: bool = False
    threshold: float = 2.0
    label_scale: float = 5.0
    lr: float = 1e-3
    batch_size: int = 500
    epochs: int = 60
    seed: int = 42
    num_classes: int = 10
    use_bias: bool = True
    interleaved: bool = False
    skip_first_layer_score: bool = False

    def __post_init__(self):
        if not self.layer_widths or any(int(w) <= 0 for w in self.layer_widths):
            raise ValueError("layer_widths must be a non-empty list of positive counts")
        self.layer_widths = [int(w) for w in self.layer_widths]
        if self.activation not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.pathway not in PATHWAYS:
            raise ValueError(f"pathway must be one of {PATHWAYS}, got {self.pathway!r}")
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        # num_classes = 1 cannot be trained (no wrong labels to sample) but is
        # a legal degenerate case for inference
        if self.batch_size < 1 or self.epochs < 0 or self.num_classes < 1:
            raise ValueError("batch_size >= 1, epochs >= 0 and num_classes >= 1 required")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    def semantics(self) -> dict:
        d = dataclasses.asdict(self)
        d["goodness"] = dataclasses.asdict(self.goodness)
        return d


@dataclass
class Network:
    """An ordered stack of trained (or in-training) layers plus its config.

    goodness_states holds one GoodnessState per layer (only the stateful
    goodness uses them); immutable after training apart from those states.
    """

    config: TrainConfig
    input_dim: int
    layers: list
    goodness_states: list

    @property
    def num_layers(self) -> int:
        return len(self.layers)


def build_network(cfg: TrainConfig, input_dim: int, rng: np.random.Generator) -> Network:
    """Initialize all layers; the std pathway widens the input by the label block."""
    first_in = input_dim + cfg.num_classes if cfg.pathway == "std" else input_dim
    dims = [first_in] + list(cfg.layer_widths)
    layers = []
    for i in range(len(cfg.layer_widths)):
        layers.append(init_layer(
            dims[i], dims[i + 1], rng,
            num_classes=cfg.num_classes if cfg.pathway == "ffcl" else None,
            use_bias=cfg.use_bias,
        ))
    states = [GoodnessState() for _ in cfg.layer_widths]
    return Network(config=cfg, input_dim=input_dim, layers=layers, goodness_states=states)


# ---------------------------------------------------------------------------
# embedding and negative sampling
# ---------------------------------------------------------------------------

def embed_input(x: np.ndarray, label: int, scale: float, num_classes: int) -> np.ndarray:
    """L2-normalized concatenation [x ; scale * onehot(label)]."""
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range for {num_classes} classes")
    onehot = np.zeros(num_classes)
    onehot[label] = scale
    return l2_normalize(np.concatenate([x, onehot]))


def embed_batch(x: np.ndarray, labels: np.ndarray, scale: float, num_classes: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("labels out of range")
    block = np.zeros((x.shape[0], num_classes))
    block[np.arange(x.shape[0]), labels] = scale
    return l2_normalize(np.hstack([x, block]))


def sample_negative_label(label: int, num_classes: int, rng: np.random.Generator) -> int:
    """Uniform draw over the num_classes - 1 wrong labels."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes to sample a wrong label")
    draw = int(rng.integers(0, num_classes - 1))
    return draw + 1 if draw >= label else draw


def sample_negative_labels(labels: np.ndarray, num_classes: int,
                           rng: np.random.Generator) -> np.ndarray:
    if num_classes < 2:
        raise ValueError("need at least 2 classes to sample wrong labels")
    labels = np.asarray(labels)
    draws = rng.integers(0, num_classes - 1, size=labels.shape[0])
    return np.where(draws >= labels, draws + 1, draws)


# ---------------------------------------------------------------------------
# the per-layer loss
# ---------------------------------------------------------------------------

def ff_layer_loss(g_pos: np.ndarray, g_neg: np.ndarray, threshold: float):
    """Mean softplus(threshold - g+) + mean softplus(g- - threshold).

    Returns (loss, dL/dg_pos, dL/dg_neg); the gradients already carry the
    1/N batch factor.
    """
    g_pos = np.asarray(g_pos, dtype=np.float64)
    g_neg = np.asarray(g_neg, dtype=np.float64)
    if g_pos.shape != g_neg.shape:
        raise ValueError("positive and negative goodness batches must have equal length")
    n = g_pos.shape[0]
    loss = float(softplus_stable(threshold - g_pos).mean()
                 + softplus_stable(g_neg - threshold).mean())
    d_pos = -sigmoid(threshold - g_pos) / n
    d_neg = sigmoid(g_neg - threshold) / n
    return loss, d_pos, d_neg


# ---------------------------------------------------------------------------
# forward passes (shared verbatim with inference)
# ---------------------------------------------------------------------------

def layer_stages(params: LayerParams, x: np.ndarray, activation: str, use_gate: bool):
    """One layer's (pre-activation, activation, gated output) triple."""
    z = x @ params.weight.T
    if params.bias is not None:
        z = z + params.bias
    a = activation_forward(activation, z)
    h = norm_gate(a) if use_gate else a
    return z, a, h


def layer_backward_stages(params: LayerParams, x: np.ndarray, z: np.ndarray,
                          a: np.ndarray, dh: np.ndarray, activation: str, use_gate: bool):
    """Chain dL/dh back to (dL/dW, dL/db, dL/dx-free pre-activation grad)."""
    da = norm_gate_backward(a, dh) if use_gate else dh
    dz = activation_backward(activation, z, da)
    d_weight = dz.T @ x
    d_bias = dz.sum(axis=0) if params.bias is not None else None
    return d_weight, d_bias, dz


def ffcl_layer_forward(params: LayerParams, h_prev: np.ndarray, labels: np.ndarray,
                       activation: str, use_gate: bool, num_classes: int):
    """Label-injection pathway for one layer.

    Returns (h_free, h_labeled): goodness is computed on h_labeled while
    l2_normalize(h_free) is what the next layer consumes.
    """
    if params.label_weight is None:
        raise RuntimeError("layer has no label projection; network was not built "
                           "for the ffcl pathway")
    _, _, h_free = layer_stages(params, h_prev, activation, use_gate)
    onehot = np.zeros((h_prev.shape[0], num_classes))
    onehot[np.arange(h_prev.shape[0]), np.asarray(labels)] = 1.0
    return h_free, h_free + onehot @ params.label_weight.T


def network_input(cfg: TrainConfig, x: np.ndarray, labels: np.ndarray | None = None) -> np.ndarray:
    """What layer 0 sees: embedded image+label (std) or the L2-normalized image (ffcl)."""
    if cfg.pathway == "std":
        if labels is None:
            raise ValueError("std pathway needs labels to embed")
        return embed_batch(x, labels, cfg.label_scale, cfg.num_classes)
    return l2_normalize(np.asarray(x, dtype=np.float64))


def prefix_forward(net: Network, x0: np.ndarray, upto: int) -> np.ndarray:
    """Frozen forward through layers [0, upto); returns the input for layer `upto`."""
    cfg = net.config
    h = x0
    for i in range(upto):
        _, _, out = layer_stages(net.layers[i], h, cfg.activation, cfg.norm_gate)
        h = l2_normalize(out)
    return h


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def layer_loss_and_grads(net: Network, layer_index: int, xb: np.ndarray, yb: np.ndarray,
                         y_neg: np.ndarray, cfg: TrainConfig, training: bool = True):
    """Forward one batch through the frozen prefix and this layer, then chain
    the threshold loss back to this layer's parameter gradients.

    Returns (loss, grads dict). The goodness state is only advanced when
    ``training`` is set, so finite-difference probes can re-evaluate freely.
    """
    params = net.layers[layer_index]
    state = net.goodness_states[layer_index]
    spec = cfg.goodness

    if cfg.pathway == "std":
        in_pos = prefix_forward(net, network_input(cfg, xb, yb), layer_index)
        in_neg = prefix_forward(net, network_input(cfg, xb, y_neg), layer_index)
        z_p, a_p, h_p = layer_stages(params, in_pos, cfg.activation, cfg.norm_gate)
        z_n, a_n, h_n = layer_stages(params, in_neg, cfg.activation, cfg.norm_gate)
        g_p = goodness_eval(spec, h_p, state, training=training)
        g_n = goodness_eval(spec, h_n, state, training=training)
        loss, dg_p, dg_n = ff_layer_loss(g_p, g_n, cfg.threshold)
        dh_p = dg_p[:, None] * goodness_grad(spec, h_p, state)
        dh_n = dg_n[:, None] * goodness_grad(spec, h_n, state)
        dw_p, db_p, _ = layer_backward_stages(params, in_pos, z_p, a_p, dh_p,
                                              cfg.activation, cfg.norm_gate)
        dw_n, db_n, _ = layer_backward_stages(params, in_neg, z_n, a_n, dh_n,
                                              cfg.activation, cfg.norm_gate)
        grads = {"weight": dw_p + dw_n}
        if params.bias is not None:
            grads["bias"] = db_p + db_n
    else:
        h_prev = prefix_forward(net, network_input(cfg, xb), layer_index)
        z, a, h_free = layer_stages(params, h_prev, cfg.activation, cfg.norm_gate)
        onehot_pos = np.zeros((xb.shape[0], cfg.num_classes))
        onehot_pos[np.arange(xb.shape[0]), yb] = 1.0
        onehot_neg = np.zeros((xb.shape[0], cfg.num_classes))
        onehot_neg[np.arange(xb.shape[0]), y_neg] = 1.0
        h_pos = h_free + onehot_pos @ params.label_weight.T
        h_neg = h_free + onehot_neg @ params.label_weight.T
        g_p = goodness_eval(spec, h_pos, state, training=training)
        g_n = goodness_eval(spec, h_neg, state, training=training)
        loss, dg_p, dg_n = ff_layer_loss(g_p, g_n, cfg.threshold)
        dh_pos = dg_p[:, None] * goodness_grad(spec, h_pos, state)
        dh_neg = dg_n[:, None] * goodness_grad(spec, h_neg, state)
        d_label = dh_pos.T @ onehot_pos + dh_neg.T @ onehot_neg
        # both injected copies share one h_free, so their gradients add
        dw, db, _ = layer_backward_stages(params, h_prev, z, a, dh_pos + dh_neg,
                                          cfg.activation, cfg.norm_gate)
        grads = {"weight": dw, "label_weight": d_label}
        if params.bias is not None:
            grads["bias"] = db

    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss at layer {layer_index}")
    return loss, grads


def _train_one_batch(net: Network, layer_index: int, xb: np.ndarray, yb: np.ndarray,
                     y_neg: np.ndarray, cfg: TrainConfig) -> float:
    loss, grads = layer_loss_and_grads(net, layer_index, xb, yb, y_neg, cfg)
    adam_step(net.layers[layer_index], grads, cfg.lr)
    return loss


def train_layer(net: Network, layer_index: int, dataset: Dataset, cfg: TrainConfig,
                streams: TrainingStreams) -> list:
    """Train one layer for cfg.epochs epochs; earlier layers stay frozen.

    Returns the mean loss per epoch. The goodness state of this layer is
    reset before the first batch.
    """
    net.goodness_states[layer_index] = GoodnessState()
    n = dataset.n
    trace = []
    for epoch in range(cfg.epochs):
        order = streams.shuffle.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = dataset.features[idx]
            yb = dataset.labels[idx]
            y_neg = sample_negative_labels(yb, cfg.num_classes, streams.negative_labels)
            try:
                batch_losses.append(_train_one_batch(net, layer_index, xb, yb, y_neg, cfg))
            except NumericalError as err:
                raise NumericalError(f"{err} (epoch {epoch}, batch at offset {start})") from None
        trace.append(float(np.mean(batch_losses)))
    return trace


def train_network(cfg: TrainConfig, dataset: Dataset):
    """Algorithm entry point: build, then train layers strictly in sequence.

    Returns (network, record); the record carries per-layer loss traces and
    the seed / config-hash provenance. Deterministic given cfg.seed.
    """
    if dataset.num_classes != cfg.num_classes:
        raise ValueError(f"config expects {cfg.num_classes} classes, "
                         f"dataset has {dataset.num_classes}")
    streams = TrainingStreams.from_seed(cfg.seed)
    net = build_network(cfg, dataset.dim, streams.weight_init)
    if cfg.interleaved:
        traces = _train_interleaved(net, dataset, cfg, streams)
    else:
        traces = [train_layer(net, i, dataset, cfg, streams) for i in range(net.num_layers)]
    record = MetricsRecord(
        config_hash=config_hash(cfg.semantics()),
        seed=cfg.seed,
        layer_final_losses=[t[-1] if t else float("nan") for t in traces],
        layer_loss_traces=traces,
    )
    return net, record


def _train_interleaved(net: Network, dataset: Dataset, cfg: TrainConfig,
                       streams: TrainingStreams) -> list:
    """Batch-major variant: every layer sees each batch before the next batch."""
    for i in range(net.num_layers):
        net.goodness_states[i] = GoodnessState()
    n = dataset.n
    traces = [[] for _ in range(net.num_layers)]
    for _ in range(cfg.epochs):
        order = streams.shuffle.permutation(n)
        sums = np.zeros(net.num_layers)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = dataset.features[idx]
            yb = dataset.labels[idx]
            y_neg = sample_negative_labels(yb, cfg.num_classes, streams.negative_labels)
            for i in range(net.num_layers):
                sums[i] += _train_one_batch(net, i, xb, yb, y_neg, cfg)
            batches += 1
        for i in range(net.num_layers):
            traces[i].append(float(sums[i] / batches))
    return traces


# ---------------------------------------------------------------------------
# persistence (single .npz archive with a JSON config entry)
# ---------------------------------------------------------------------------

def save_network(net: Network, path) -> None:
    cfg = net.config
    payload = {"input_dim": net.input_dim}
    for i, layer in enumerate(net.layers):
        payload[f"layer{i}_weight"] = layer.weight
        if layer.bias is not None:
            payload[f"layer{i}_bias"] = layer.bias
        if layer.label_weight is not None:
            payload[f"layer{i}_label_weight"] = layer.label_weight
    meta = cfg.semantics()
    meta["goodness_states"] = [dataclasses.asdict(s) for s in net.goodness_states]
    np.savez(path, __config__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **payload)


def load_network(path) -> Network:
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["__config__"].tobytes()).decode())
        states_meta = meta.pop("goodness_states")
        goodness = GoodnessSpec(**meta.pop("goodness"))
        cfg = TrainConfig(goodness=goodness, **meta)
        input_dim = int(archive["input_dim"])
        layers = []
        i = 0
        while f"layer{i}_weight" in archive:
            layers.append(LayerParams(
                weight=archive[f"layer{i}_weight"],
                bias=archive[f"layer{i}_bias"] if f"layer{i}_bias" in archive else None,
                label_weight=(archive[f"layer{i}_label_weight"]
                              if f"layer{i}_label_weight" in archive else None),
            ))
            i += 1
    states = [GoodnessState(**s) for s in states_meta]
    return Network(config=cfg, input_dim=input_dim, layers=layers, goodness_states=states)
