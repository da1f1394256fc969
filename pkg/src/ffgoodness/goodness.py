"""Goodness functions over activation vectors, with analytic gradients.

A goodness function maps one activation row h (length d) to a scalar that
layer-local training pushes above a threshold for positive inputs and below
it for negative inputs. This module evaluates 12 of them plus their exact
gradients with respect to h, batched row-wise over an (N, d) matrix.

Registry (text key -> definition):

    sos                   (1/d) sum h_i^2                     mean squared activation
    topk                  mean of the k largest entries        k = max(5, floor(f*d)), f default 0.02
    contrast_topk         mean(top k) - mean(bottom k)         f default 0.01
    ln_topk               topk applied to layernorm(h)
    entmax_energy         sum pi_i h_i^2, pi = entmax_alpha(h) adaptive sparse weighting
    burstiness            m4/m2^2 - 3                          excess kurtosis, scale/shift invariant
    ln_burstiness         burstiness applied to layernorm(h)
    moment_p              m_p/m2^(p/2) - beta_p                beta_p = (p-1)!! even p, 0 odd p
    variance              m2                                   population variance
    neg_entropy           sum p log p, p = softmax(h)
    softmax_energy_margin sos + lambda * gbar * (-logsumexp(h/T))   gbar: running mean of sos
    game_theoretic        sum w_i h_i^2, w_i = |h_i| / (sum|h_j| + eps)

Only softmax_energy_margin carries state (the running mean); everything else
is pure. Gradients for the top-k family are the 1/k subgradient on the
selected set; the entmax gradient applies the full product rule through the
entmax Jacobian unless the spec's straight-through flag is set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .layers import layernorm_backward, layernorm_forward
from .numerics import double_factorial, int_power

GOODNESS_KINDS = (
    "sos",
    "topk",
    "contrast_topk",
    "ln_topk",
    "entmax_energy",
    "burstiness",
    "ln_burstiness",
    "moment_p",
    "variance",
    "neg_entropy",
    "softmax_energy_margin",
    "game_theoretic",
)

_TOPK_FAMILY = ("topk", "contrast_topk", "ln_topk")
_MOMENT_FAMILY = ("burstiness", "ln_burstiness", "moment_p", "variance")

# Below this variance a row is treated as constant: kurtosis-family goodness
# falls back to -beta_p with zero gradient (the m2 -> 0 limit convention).
_VARIANCE_GUARD = 1e-12

ENTMAX_MAX_ITER = 50
ENTMAX_TOL = 1e-8


@dataclass(frozen=True)
class GoodnessSpec:
    """One goodness function plus its parameters.

    k_fraction defaults per kind (0.02 for topk/ln_topk, 0.01 for
    contrast_topk); an explicit k overrides the fraction outright.
    """

    kind: str
    k_fraction: float | None = None
    k: int | None = None
    alpha: float = 1.5
    p: int = 4
    temperature: float = 1.0
    margin_lambda: float = 0.5
    epsilon: float = 1e-8
    entmax_straight_through: bool = False

    def __post_init__(self):
        if self.kind not in GOODNESS_KINDS:
            raise ValueError(f"unknown goodness kind {self.kind!r}; expected one of {GOODNESS_KINDS}")
        if self.k_fraction is not None and not 0.0 < self.k_fraction <= 1.0:
            raise ValueError(f"k_fraction must be in (0, 1], got {self.k_fraction}")
        if self.k is not None and self.k < 1:
            raise ValueError(f"explicit k must be >= 1, got {self.k}")
        if not 1.0 <= self.alpha <= 2.0:
            raise ValueError(f"alpha must be in [1, 2], got {self.alpha}")
        if int(self.p) != self.p or self.p < 2:
            raise ValueError(f"moment order p must be an integer >= 2, got {self.p}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def resolved_k_fraction(self) -> float:
        if self.k_fraction is not None:
            return self.k_fraction
        return 0.01 if self.kind == "contrast_topk" else 0.02

    def effective_k(self, d: int) -> int:
        """Selection size for width d: explicit k, else max(5, floor(f*d)) capped at d."""
        if self.k is not None:
            if self.k > d:
                raise ValueError(f"k={self.k} exceeds layer width {d}")
            return self.k
        return min(d, max(5, int(np.floor(self.resolved_k_fraction * d))))

    def with_params(self, **kwargs) -> "GoodnessSpec":
        return replace(self, **kwargs)


def spec_from_key(kind: str, **params) -> GoodnessSpec:
    """Build a GoodnessSpec from its registry key plus keyword parameters."""
    return GoodnessSpec(kind=kind, **params)


@dataclass
class GoodnessState:
    """Running mean of the sos goodness, used by softmax_energy_margin.

    Initialized to the first training batch's mean, then updated as
    gbar <- momentum * gbar + (1 - momentum) * batch_mean after each
    training-mode evaluation. Frozen (read-only) during inference. The
    gradient always treats the running mean as a constant.
    """

    running_mean_sos: float = 0.0
    momentum: float = 0.9
    initialized: bool = False


# ---------------------------------------------------------------------------
# entmax: sparse softmax family, alpha in [1, 2]
# ---------------------------------------------------------------------------

def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def sparsemax_closed_form(z: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the simplex via the sorted-threshold rule.

    Independent of the bisection path below; kept separate on purpose so the
    two can be checked against each other.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    z_sorted = np.sort(zb, axis=1)[:, ::-1]
    ranks = np.arange(1, zb.shape[1] + 1, dtype=np.float64)
    cumsum = np.cumsum(z_sorted, axis=1)
    cond = z_sorted - (cumsum - 1.0) / ranks > 0
    rho = cond.sum(axis=1)
    tau = (np.take_along_axis(cumsum, rho[:, None] - 1, axis=1).ravel() - 1.0) / rho
    out = np.maximum(zb - tau[:, None], 0.0)
    return out[0] if single else out


def entmax_map(z: np.ndarray, alpha: float, max_iter: int = ENTMAX_MAX_ITER,
               tol: float = ENTMAX_TOL) -> np.ndarray:
    """alpha-entmax along the last axis.

    alpha=1 is computed directly as softmax; otherwise the simplex threshold
    tau with p_i = [(alpha-1) z_i - tau]_+^(1/(alpha-1)) is found by bisection
    on [t_max - 1, t_max], which brackets the root for every alpha in (1, 2].
    The full iteration budget is always spent (50 halvings resolve tau to
    ~1e-15) so downstream finite-difference checks see a smooth map; tol only
    validates the final simplex sum.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("entmax input must be finite")
    if not 1.0 <= alpha <= 2.0:
        raise ValueError(f"alpha must be in [1, 2], got {alpha}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if alpha == 1.0:
        return softmax(z)

    single = z.ndim == 1
    zb = np.atleast_2d(z)
    exponent = 1.0 / (alpha - 1.0)
    t = (alpha - 1.0) * zb
    lo = t.max(axis=1, keepdims=True) - 1.0
    hi = t.max(axis=1, keepdims=True)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        psum = (np.maximum(t - mid, 0.0) ** exponent).sum(axis=1, keepdims=True)
        take_lo = psum >= 1.0
        lo = np.where(take_lo, mid, lo)
        hi = np.where(take_lo, hi, mid)
    p = np.maximum(t - lo, 0.0) ** exponent
    sums = p.sum(axis=1, keepdims=True)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValueError(f"entmax bisection did not converge within tol={tol}")
    p = p / sums
    return p[0] if single else p


def entmax_jacobian_apply(pi: np.ndarray, alpha: float, v: np.ndarray) -> np.ndarray:
    """J_entmax(z) @ v expressed through the output pi.

    On the support the Jacobian is diag(s) - s s^T / sum(s) with
    s_i = pi_i^(2-alpha); off-support rows and columns are zero. The matrix
    is symmetric, so this doubles as J^T v.
    """
    pi = np.asarray(pi, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(np.abs(pi.sum(axis=-1) - 1.0) > 1e-6) or np.any(pi < -1e-6):
        raise ValueError("pi is not on the probability simplex")
    s = np.where(pi > 0.0, pi ** (2.0 - alpha), 0.0)
    coeff = (s * v).sum(axis=-1, keepdims=True) / s.sum(axis=-1, keepdims=True)
    return s * (v - coeff)


# ---------------------------------------------------------------------------
# shared moment helpers
# ---------------------------------------------------------------------------

def _moment_beta(p: int) -> float:
    return float(double_factorial(p - 1)) if p % 2 == 0 else 0.0


def _standardized_moment(h: np.ndarray, p: int):
    """Per-row (g, centered, m2, guard) for g = m_p/m2^(p/2) - beta_p."""
    d = h.shape[1]
    if d < 2:
        raise ValueError("moment goodness needs at least 2 features per row")
    c = h - h.mean(axis=1, keepdims=True)
    m2 = int_power(c, 2).mean(axis=1)
    mp = int_power(c, p).mean(axis=1)
    beta = _moment_beta(p)
    guarded = m2 < _VARIANCE_GUARD
    safe_m2 = np.where(guarded, 1.0, m2)
    g = np.where(guarded, -beta, mp / safe_m2 ** (p / 2.0) - beta)
    return g, c, m2, guarded


def _standardized_moment_grad(h: np.ndarray, p: int) -> np.ndarray:
    d = h.shape[1]
    if d < 2:
        raise ValueError("moment goodness needs at least 2 features per row")
    c = h - h.mean(axis=1, keepdims=True)
    c_prev = int_power(c, p - 1) if p > 2 else c
    c_p = c_prev * c
    m2 = int_power(c, 2).mean(axis=1, keepdims=True) if p != 2 \
        else c_p.mean(axis=1, keepdims=True)
    guarded = m2 < _VARIANCE_GUARD
    safe_m2 = np.where(guarded, 1.0, m2)
    mp = c_p.mean(axis=1, keepdims=True)
    m_prev = c_prev.mean(axis=1, keepdims=True)
    scale = safe_m2 ** (p / 2.0)
    grad = (p / d) * ((c_prev - m_prev) / scale - c * (mp / (scale * safe_m2)))
    grad[guarded.ravel()] = 0.0
    return grad


def _topk_mask(h: np.ndarray, k: int, largest: bool = True) -> np.ndarray:
    """Boolean mask of the k largest (or smallest) entries per row.

    Ties at the selection boundary go to the lowest index, matching
    numerics.top_k_indices; O(d) per row via partition instead of a sort.
    """
    if not largest:
        return _topk_mask(-h, k, largest=True)
    d = h.shape[1]
    if k >= d:
        return np.ones(h.shape, dtype=bool)
    kth = np.partition(h, d - k, axis=1)[:, d - k, None]
    mask = h > kth
    need = k - mask.sum(axis=1, keepdims=True)
    ties = h == kth
    mask |= ties & (np.cumsum(ties, axis=1) <= need)
    return mask


def _sos(h: np.ndarray) -> np.ndarray:
    return (h ** 2).mean(axis=1)


def _logsumexp(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    return (zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))).ravel()


# ---------------------------------------------------------------------------
# evaluation and gradient dispatch
# ---------------------------------------------------------------------------

def _as_batch(h_batch) -> np.ndarray:
    h = np.asarray(h_batch, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    if h.ndim != 2:
        raise ValueError(f"activation batch must be 1-d or 2-d, got {h.ndim}-d")
    return h


def _require_state(state: GoodnessState | None) -> GoodnessState:
    if state is None:
        raise ValueError("softmax_energy_margin requires a GoodnessState")
    return state


def goodness_eval(spec: GoodnessSpec, h_batch, state: GoodnessState | None = None,
                  training: bool = False) -> np.ndarray:
    """One goodness scalar per row of h_batch.

    ``training=True`` lets softmax_energy_margin update its running mean
    after the evaluation (and lazily initialize it on the first call); with
    the default the state is read-only, which is what inference uses.
    """
    h = _as_batch(h_batch)
    kind = spec.kind

    if kind == "sos":
        return _sos(h)

    if kind == "topk":
        k = spec.effective_k(h.shape[1])
        return (h * _topk_mask(h, k)).sum(axis=1) / k

    if kind == "contrast_topk":
        k = spec.effective_k(h.shape[1])
        top = (h * _topk_mask(h, k, largest=True)).sum(axis=1)
        bottom = (h * _topk_mask(h, k, largest=False)).sum(axis=1)
        return (top - bottom) / k

    if kind == "ln_topk":
        return goodness_eval(spec.with_params(kind="topk"), layernorm_forward(h))

    if kind == "entmax_energy":
        pi = entmax_map(h, spec.alpha)
        return (pi * h ** 2).sum(axis=1)

    if kind == "burstiness":
        return _standardized_moment(h, 4)[0]

    if kind == "ln_burstiness":
        return _standardized_moment(layernorm_forward(h), 4)[0]

    if kind == "moment_p":
        return _standardized_moment(h, int(spec.p))[0]

    if kind == "variance":
        if h.shape[1] < 2:
            raise ValueError("variance goodness needs at least 2 features per row")
        return h.var(axis=1)

    if kind == "neg_entropy":
        logp = h - _logsumexp(h)[:, None]
        return (np.exp(logp) * logp).sum(axis=1)

    if kind == "softmax_energy_margin":
        st = _require_state(state)
        gsos = _sos(h)
        batch_mean = float(gsos.mean())
        if not st.initialized:
            if not training:
                raise RuntimeError("softmax_energy_margin state is uninitialized; "
                                   "evaluate in training mode first")
            st.running_mean_sos = batch_mean
            st.initialized = True
            update = False  # momentum update of a just-initialized mean is a no-op
        else:
            update = training
        gbar = st.running_mean_sos
        energy = -_logsumexp(h / spec.temperature)
        g = gsos + spec.margin_lambda * gbar * energy
        if update:
            st.running_mean_sos = st.momentum * gbar + (1.0 - st.momentum) * batch_mean
        return g

    if kind == "game_theoretic":
        denom = np.abs(h).sum(axis=1, keepdims=True) + spec.epsilon
        w = np.abs(h) / denom
        return (w * h ** 2).sum(axis=1)

    raise AssertionError(f"unhandled goodness kind {kind!r}")


def goodness_grad(spec: GoodnessSpec, h_batch, state: GoodnessState | None = None) -> np.ndarray:
    """Row i holds d g / d h for sample i; analytic, no autodiff.

    Top-k family: the 1/k subgradient on the selected set. Entmax: the full
    product rule 2*pi*h + J(h^2) unless straight-through is requested. The
    running mean of softmax_energy_margin is treated as a constant.
    """
    h = _as_batch(h_batch)
    n, d = h.shape
    kind = spec.kind

    if kind == "sos":
        return 2.0 * h / d

    if kind == "topk":
        k = spec.effective_k(d)
        return _topk_mask(h, k) / k

    if kind == "contrast_topk":
        k = spec.effective_k(d)
        top = _topk_mask(h, k, largest=True)
        bottom = _topk_mask(h, k, largest=False)
        return (top.astype(np.float64) - bottom) / k

    if kind == "ln_topk":
        y = layernorm_forward(h)
        inner = goodness_grad(spec.with_params(kind="topk"), y)
        return layernorm_backward(h, inner)

    if kind == "entmax_energy":
        pi = entmax_map(h, spec.alpha)
        grad = 2.0 * pi * h
        if not spec.entmax_straight_through:
            grad = grad + entmax_jacobian_apply(pi, spec.alpha, h ** 2)
        return grad

    if kind == "burstiness":
        return _standardized_moment_grad(h, 4)

    if kind == "ln_burstiness":
        y = layernorm_forward(h)
        return layernorm_backward(h, _standardized_moment_grad(y, 4))

    if kind == "moment_p":
        return _standardized_moment_grad(h, int(spec.p))

    if kind == "variance":
        if d < 2:
            raise ValueError("variance goodness needs at least 2 features per row")
        c = h - h.mean(axis=1, keepdims=True)
        return 2.0 * c / d

    if kind == "neg_entropy":
        logp = h - _logsumexp(h)[:, None]
        p = np.exp(logp)
        g = (p * logp).sum(axis=1, keepdims=True)
        return p * (logp - g)

    if kind == "softmax_energy_margin":
        st = _require_state(state)
        if not st.initialized:
            raise RuntimeError("softmax_energy_margin state is uninitialized")
        scaled = softmax(h / spec.temperature, axis=1)
        return 2.0 * h / d - (spec.margin_lambda * st.running_mean_sos / spec.temperature) * scaled

    if kind == "game_theoretic":
        denom = np.abs(h).sum(axis=1, keepdims=True) + spec.epsilon
        g = (np.abs(h) ** 3).sum(axis=1, keepdims=True) / denom
        return np.sign(h) * (3.0 * h ** 2 - g) / denom

    raise AssertionError(f"unhandled goodness kind {kind!r}")
