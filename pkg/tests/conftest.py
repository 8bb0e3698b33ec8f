import time
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from offline_lmdp import BehaviorDistribution, build_random_cmdp, exact_eval, optimal_unconstrained

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ref_mdp():
    """The 6-state, 3-action, d=5 reference instance with one constraint."""
    return build_random_cmdp(0, (6, 3, 5, 1), 0.9)


@pytest.fixture(scope="session")
def ref_optimum(ref_mdp):
    pi_star, j_star = optimal_unconstrained(ref_mdp)
    return pi_star, j_star


@pytest.fixture(scope="session")
def ref_behavior(ref_mdp, ref_optimum):
    mu = exact_eval(ref_mdp, ref_optimum[0]).mu
    return BehaviorDistribution.blend(mu, 0.5)


def random_policy(rng, S, A):
    from offline_lmdp import TabularPolicy

    p = rng.dirichlet(np.ones(A), size=S)
    return TabularPolicy(p / p.sum(axis=1, keepdims=True))


def self_loop_mdp(reward=0.3, gamma=0.9, num_actions=1):
    """One state, ``num_actions`` actions, one feature."""
    from offline_lmdp import LinearCmdp

    return LinearCmdp(
        num_states=1, num_actions=num_actions, dim=1,
        phi=np.ones((num_actions, 1)), psi=np.ones((1, 1)),
        thetas=np.array([[reward]]), gamma=gamma,
    )


# acceptance criteria report: one line per criterion in the terminal summary
ACCEPTANCE = {}


@contextmanager
def criterion(number, title):
    """Record PASS if the block completes, FAIL if it raises; details go in the yielded dict."""
    info = {}
    start = time.perf_counter()
    try:
        yield info
    except BaseException:
        ACCEPTANCE[number] = ("FAIL", title, info, time.perf_counter() - start)
        raise
    ACCEPTANCE[number] = ("PASS", title, info, time.perf_counter() - start)


def _format_info(info):
    parts = []
    for key, value in info.items():
        if isinstance(value, float):
            value = f"{value:.4g}"
        elif isinstance(value, (list, tuple)):
            value = "[" + ", ".join(f"{v:.4g}" if isinstance(v, float) else str(v) for v in value) + "]"
        parts.append(f"{key}={value}")
    return " ".join(parts)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, info, elapsed = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}: {title} ({elapsed:.1f}s) {_format_info(info)}")
