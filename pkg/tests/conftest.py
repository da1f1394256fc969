import numpy as np
import pytest

from ffgoodness.goodness import GoodnessSpec, GoodnessState


# Every goodness parameterization exercised by the gradient suites: all 12
# registry keys, the generalized-moment family at an odd and an even order.
ALL_GOODNESS_SPECS = [
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


def spec_id(spec: GoodnessSpec) -> str:
    if spec.kind == "moment_p":
        return f"moment_p{spec.p}"
    return spec.kind


def make_state(h: np.ndarray) -> GoodnessState | None:
    return GoodnessState(running_mean_sos=float((np.asarray(h) ** 2).mean()),
                         initialized=True)


def state_for(spec: GoodnessSpec, h: np.ndarray):
    return make_state(h) if spec.kind == "softmax_energy_margin" else None


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240601))
