"""Fast invariant suite runnable from the CLI, independent of pytest.

Each check prints one PASS/FAIL line; the full battery takes a few seconds.
The same properties (plus many more cases) are covered by the test suite;
this exists so a deployed install can be sanity-checked in place.
"""

from __future__ import annotations

import numpy as np

from .goodness import (GoodnessSpec, GoodnessState, entmax_jacobian_apply,
                       entmax_map, goodness_eval, goodness_grad, softmax,
                       sparsemax_closed_form)
from .layers import (ACTIVATION_KINDS, activation_backward, activation_forward,
                     layernorm_forward, norm_gate, norm_gate_backward)
from .numerics import (finite_difference_gradient, finite_difference_jvp,
                       l2_normalize, relative_error)
from .training import ff_layer_loss

# 13 parameterizations: every registry key, with both an odd and an even
# moment order for the generalized-moment family.
SELFTEST_SPECS = [
    GoodnessSpec("sos"),
    GoodnessSpec("topk"),
    GoodnessSpec("contrast_topk"),
    GoodnessSpec("ln_topk"),
    GoodnessSpec("entmax_energy", alpha=1.5),
    GoodnessSpec("burstiness"),
    GoodnessSpec("ln_burstiness"),
    GoodnessSpec("moment_p", p=3),
    GoodnessSpec("moment_p", p=6),
    GoodnessSpec("variance"),
    GoodnessSpec("neg_entropy"),
    GoodnessSpec("softmax_energy_margin"),
    GoodnessSpec("game_theoretic"),
]


def _spec_label(spec: GoodnessSpec) -> str:
    if spec.kind == "moment_p":
        return f"moment_p(p={spec.p})"
    if spec.kind == "entmax_energy":
        return f"entmax_energy(alpha={spec.alpha})"
    return spec.kind


def frozen_state(h: np.ndarray) -> GoodnessState:
    """Initialized state for the stateful goodness, per-batch mean seeded."""
    return GoodnessState(running_mean_sos=float((h ** 2).mean()), initialized=True)


def check_goodness_gradients(n_vectors: int = 10, dim: int = 64, seed: int = 0,
                             rel_tol: float = 1e-4) -> list:
    rng = np.random.Generator(np.random.PCG64(seed))
    results = []
    for spec in SELFTEST_SPECS:
        worst = 0.0
        for _ in range(n_vectors):
            h = sample_tie_free_vector(rng, dim, spec)
            state = frozen_state(h[None, :]) if spec.kind == "softmax_energy_margin" else None
            analytic = goodness_grad(spec, h[None, :], state)[0]
            fd = finite_difference_gradient(
                lambda v: float(goodness_eval(spec, v[None, :], state)[0]), h.copy())
            worst = max(worst, relative_error(analytic, fd))
        results.append((f"grad {_spec_label(spec)}", worst <= rel_tol,
                        f"max rel err {worst:.2e}"))
    return results


def sample_tie_free_vector(rng: np.random.Generator, dim: int,
                           spec: GoodnessSpec, margin: float = 1e-3) -> np.ndarray:
    """Random vector with no near-ties at the top-k boundary (if relevant)."""
    for _ in range(100):
        h = rng.standard_normal(dim)
        if spec.kind not in ("topk", "contrast_topk", "ln_topk"):
            return h
        v = layernorm_forward(h[None, :])[0] if spec.kind == "ln_topk" else h
        k = spec.effective_k(dim)
        s = np.sort(v)[::-1]
        if s[k - 1] - s[k] > margin and (spec.kind != "contrast_topk"
                                         or np.sort(v)[k] - np.sort(v)[k - 1] > margin):
            return h
    raise RuntimeError("could not sample a tie-free vector")


def check_entmax(seed: int = 1) -> list:
    rng = np.random.Generator(np.random.PCG64(seed))
    results = []
    z = rng.standard_normal((200, 32)) * 2.0
    worst_sum, worst_min = 0.0, 0.0
    for alpha in (1.0, 1.25, 1.5, 1.75, 2.0):
        pi = entmax_map(z, alpha)
        worst_sum = max(worst_sum, float(np.abs(pi.sum(axis=1) - 1).max()))
        worst_min = min(worst_min, float(pi.min()))
    results.append(("entmax simplex", worst_sum <= 1e-6 and worst_min >= 0.0,
                    f"max |sum-1| {worst_sum:.2e}, min {worst_min:.2e}"))
    gap2 = float(np.abs(entmax_map(z, 2.0) - sparsemax_closed_form(z)).max())
    results.append(("entmax(2) vs sparsemax", gap2 <= 1e-8, f"max gap {gap2:.2e}"))
    gap1 = float(np.abs(entmax_map(z, 1.0) - softmax(z)).max())
    results.append(("entmax(1) vs softmax", gap1 <= 1e-10, f"max gap {gap1:.2e}"))
    worst = 0.0
    for alpha in (1.25, 1.5, 1.75, 2.0):
        for _ in range(20):
            x = rng.standard_normal(16)
            v = rng.standard_normal(16)
            jvp = finite_difference_jvp(lambda q: entmax_map(q, alpha), x, v)
            analytic = entmax_jacobian_apply(entmax_map(x, alpha), alpha, v)
            worst = max(worst, relative_error(analytic, jvp))
    results.append(("entmax jacobian-vector", worst <= 1e-4, f"max rel err {worst:.2e}"))
    return results


def check_moment_identities(seed: int = 2) -> list:
    rng = np.random.Generator(np.random.PCG64(seed))
    burst = GoodnessSpec("burstiness")
    results = []
    h = rng.standard_normal((50, 64))
    base = goodness_eval(burst, h)
    worst = 0.0
    for c in (0.1, 1.0, 10.0, 1000.0):
        worst = max(worst, float(np.abs(goodness_eval(burst, c * h) - base).max()))
    worst = max(worst, float(np.abs(goodness_eval(burst, h + 7.5) - base).max()))
    results.append(("burstiness scale/shift invariance", worst <= 1e-9, f"max drift {worst:.2e}"))
    gap4 = float(np.abs(goodness_eval(GoodnessSpec("moment_p", p=4), h) - base).max())
    results.append(("moment_p(4) == burstiness", gap4 == 0.0, f"max gap {gap4:.2e}"))
    g2 = float(np.abs(goodness_eval(GoodnessSpec("moment_p", p=2), h)).max())
    results.append(("moment_p(2) == 0", g2 == 0.0, f"max |g| {g2:.2e}"))
    ln_gap = float(np.abs(goodness_eval(GoodnessSpec("ln_burstiness"), h) - base).max())
    results.append(("ln_burstiness == burstiness", ln_gap <= 1e-6, f"max gap {ln_gap:.2e}"))
    return results


def check_layers(seed: int = 3) -> list:
    rng = np.random.Generator(np.random.PCG64(seed))
    results = []
    worst = 0.0
    for kind in ACTIVATION_KINDS:
        z = rng.standard_normal(16) * 2.0
        z[np.abs(z) < 1e-2] += 0.05  # stay clear of the relu kink
        u = rng.standard_normal(16)
        analytic = activation_backward(kind, z[None, :], u[None, :])[0]
        fd = finite_difference_gradient(
            lambda q: float(activation_forward(kind, q[None, :])[0] @ u), z.copy())
        worst = max(worst, relative_error(analytic, fd))
    results.append(("activation backward", worst <= 1e-4, f"max rel err {worst:.2e}"))
    h = rng.standard_normal(12)
    u = rng.standard_normal(12)
    fd = finite_difference_gradient(lambda q: float(norm_gate(q[None, :])[0] @ u), h.copy())
    gate_err = relative_error(norm_gate_backward(h[None, :], u[None, :])[0], fd)
    results.append(("norm gate backward", gate_err <= 1e-4, f"rel err {gate_err:.2e}"))
    loss_mid, _, _ = ff_layer_loss(np.array([2.0]), np.array([2.0]), 2.0)
    results.append(("layer loss at threshold", abs(loss_mid - 2 * np.log(2)) < 1e-12,
                    f"loss {loss_mid:.6f}"))
    unit = l2_normalize(rng.standard_normal(8))
    results.append(("l2 normalize idempotent",
                    bool(np.array_equal(l2_normalize(unit), unit) or
                         np.allclose(l2_normalize(unit), unit, atol=1e-15)),
                    "fixed point on the unit sphere"))
    return results


def run_selftest(verbose: bool = True) -> bool:
    checks = (check_goodness_gradients() + check_entmax()
              + check_moment_identities() + check_layers())
    ok = True
    for name, passed, detail in checks:
        ok &= passed
        if verbose:
            print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    if verbose:
        print(f"selftest: {'all checks passed' if ok else 'FAILURES PRESENT'}")
    return ok
