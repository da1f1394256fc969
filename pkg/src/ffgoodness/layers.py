"""Activations, layer normalization, norm-gating, dense layers and Adam.

Every forward operation has a matching analytic backward; all of them are
checked against central finite differences in the test suite. Forward and
backward functions are pure; only ``adam_step`` mutates (the LayerParams it
is given, single-writer).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import sigmoid

ACTIVATION_KINDS = ("relu", "gelu", "swish", "ln_gelu", "ln_swish")

LAYERNORM_EPS = 1e-5

# tanh-approximation constant for GELU
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


class NumericalError(RuntimeError):
    """A non-finite value reached an optimizer or loss; the run must abort."""


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def _gelu(z):
    return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + _GELU_A * z ** 3)))


def _gelu_grad(z):
    u = _GELU_C * (z + _GELU_A * z ** 3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * z ** 2)
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t ** 2) * du


def _swish(z):
    return z * sigmoid(z)


def _swish_grad(z):
    s = sigmoid(z)
    return s + z * s * (1.0 - s)


# ---------------------------------------------------------------------------
# layer normalization (parameter-free; shared with the goodness module)
# ---------------------------------------------------------------------------

def layernorm_forward(h: np.ndarray, eps: float = LAYERNORM_EPS) -> np.ndarray:
    """(h - mean) / sqrt(var + eps) per row; no learned affine terms."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] < 2:
        raise ValueError("layernorm needs at least 2 features per row")
    mu = h.mean(axis=-1, keepdims=True)
    var = ((h - mu) ** 2).mean(axis=-1, keepdims=True)
    return (h - mu) / np.sqrt(var + eps)


def layernorm_backward(h: np.ndarray, upstream: np.ndarray, eps: float = LAYERNORM_EPS) -> np.ndarray:
    """Chain upstream through layernorm_forward evaluated at h.

    With y = (h-mu)/s, s = sqrt(var+eps):  dL/dh = (u - mean(u) - y*mean(u*y)) / s.
    """
    h = np.asarray(h, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)
    mu = h.mean(axis=-1, keepdims=True)
    var = ((h - mu) ** 2).mean(axis=-1, keepdims=True)
    s = np.sqrt(var + eps)
    y = (h - mu) / s
    return (u - u.mean(axis=-1, keepdims=True) - y * (u * y).mean(axis=-1, keepdims=True)) / s


# ---------------------------------------------------------------------------
# activations (LN-prefixed kinds normalize the pre-activation first)
# ---------------------------------------------------------------------------

def activation_forward(kind: str, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "gelu":
        return _gelu(z)
    if kind == "swish":
        return _swish(z)
    if kind == "ln_gelu":
        return _gelu(layernorm_forward(z))
    if kind == "ln_swish":
        return _swish(layernorm_forward(z))
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATION_KINDS}")


def activation_backward(kind: str, z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)
    if kind == "relu":
        return u * (z > 0)
    if kind == "gelu":
        return u * _gelu_grad(z)
    if kind == "swish":
        return u * _swish_grad(z)
    if kind in ("ln_gelu", "ln_swish"):
        y = layernorm_forward(z)
        du = u * (_gelu_grad(y) if kind == "ln_gelu" else _swish_grad(y))
        return layernorm_backward(z, du)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATION_KINDS}")


# ---------------------------------------------------------------------------
# norm gate: h -> sigmoid(||h||) * h, applied after the activation
# ---------------------------------------------------------------------------

def norm_gate(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    r = np.linalg.norm(h, axis=-1, keepdims=True)
    return sigmoid(r) * h


def norm_gate_backward(h: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """J^T u for the gate; J = sigmoid(r) I + sigmoid'(r)/r * h h^T."""
    h = np.asarray(h, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)
    r = np.linalg.norm(h, axis=-1, keepdims=True)
    g = sigmoid(r)
    # (h.u)/r -> 0 as h -> 0, so the guard only avoids the 0/0.
    scale = np.where(r > 1e-12, g * (1.0 - g) / np.maximum(r, 1e-12), 0.0)
    return g * u + scale * (h * u).sum(axis=-1, keepdims=True) * h


# ---------------------------------------------------------------------------
# dense layer parameters + Adam
# ---------------------------------------------------------------------------

@dataclass
class LayerParams:
    """Weights, bias and optional per-layer label projection, plus Adam state."""

    weight: np.ndarray                      # (out, in)
    bias: np.ndarray | None                 # (out,) or None when biases disabled
    label_weight: np.ndarray | None = None  # (out, C), label-injection pathway only
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step_count: int = 0

    def named_params(self) -> dict:
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        if self.label_weight is not None:
            out["label_weight"] = self.label_weight
        return out


def init_layer(in_dim: int, out_dim: int, rng: np.random.Generator,
               num_classes: int | None = None, use_bias: bool = True) -> LayerParams:
    """Uniform +-sqrt(1/fan_in) weights, zero bias, zero Adam accumulators."""
    bound = np.sqrt(1.0 / in_dim)
    weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    bias = np.zeros(out_dim) if use_bias else None
    label_weight = None
    if num_classes is not None:
        label_weight = rng.uniform(-bound, bound, size=(out_dim, num_classes))
    params = LayerParams(weight=weight, bias=bias, label_weight=label_weight)
    for name, value in params.named_params().items():
        params.adam_m[name] = np.zeros_like(value)
        params.adam_v[name] = np.zeros_like(value)
    return params


def adam_step(params: LayerParams, grads: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, in place.

    ``grads`` maps a subset of {"weight", "bias", "label_weight"} to arrays of
    matching shape. Raises NumericalError on any non-finite gradient so the
    trainer can abort with diagnostics instead of poisoning the parameters.
    """
    tensors = params.named_params()
    for name, g in grads.items():
        if name not in tensors:
            raise ValueError(f"gradient for unknown parameter {name!r}")
        if g.shape != tensors[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {tensors[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    params.step_count += 1
    t = params.step_count
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        # theta -= lr * (m/corr1) / (sqrt(v/corr2) + eps), fused
        denom = np.sqrt(v / corr2)
        denom += eps
        update = m / denom
        update *= lr / corr1
        tensors[name] -= update
