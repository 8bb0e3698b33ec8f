"""Synthetic linear CMDPs and the exact tabular oracle.

State-action pairs are flattened as ``s * num_actions + a`` throughout, so
``phi`` has shape ``(S*A, d)`` and the occupancy measure ``mu`` is a length
``S*A`` vector.  Returns are normalized: ``J = (1 - gamma) E[sum gamma^t r]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

from ._validation import (
    check_array,
    check_count,
    check_scalar,
    check_simplex_rows,
    check_state_indices,
)

__all__ = [
    "LinearCmdp",
    "TabularPolicy",
    "ExactEval",
    "ConstrainedOptimum",
    "InfeasibleError",
    "build_random_cmdp",
    "transition_matrix",
    "exact_eval",
    "optimal_unconstrained",
    "optimal_constrained",
    "lagrangian_f",
    "lagrangian_g",
    "lagrangian_value",
]


class InfeasibleError(ValueError):
    """No policy satisfies the constraints of a CMDP."""


@dataclass(frozen=True, eq=False)
class LinearCmdp:
    """A tabular CMDP whose transitions and rewards factor through ``phi``.

    ``thetas[0]`` parameterizes the objective reward and ``thetas[1:]`` the
    constraint rewards, which must satisfy ``J_i >= tau[i-1]``.
    """

    num_states: int
    num_actions: int
    dim: int
    phi: np.ndarray
    psi: np.ndarray
    thetas: np.ndarray
    gamma: float
    s0: int = 0
    tau: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        S = check_count(self.num_states, "num_states", min_val=1)
        A = check_count(self.num_actions, "num_actions", min_val=1)
        d = check_count(self.dim, "dim", min_val=1)
        phi = check_simplex_rows(self.phi, "phi")
        psi = check_simplex_rows(self.psi, "psi")
        thetas = check_array(self.thetas, ndim=2, name="thetas")
        tau = check_array(self.tau, ndim=1, name="tau")
        if phi.shape != (S * A, d):
            raise ValueError(f"phi must have shape {(S * A, d)}, got {phi.shape}")
        if psi.shape != (d, S):
            raise ValueError(f"psi must have shape {(d, S)}, got {psi.shape}")
        if thetas.shape[0] < 1 or thetas.shape[1] != d:
            raise ValueError(f"thetas must have shape (I+1, {d}), got {thetas.shape}")
        if np.any(thetas < 0) or np.any(thetas > 1):
            raise ValueError("theta entries must lie in [0, 1]")
        if tau.shape != (thetas.shape[0] - 1,):
            raise ValueError(
                f"tau must hold one threshold per constraint ({thetas.shape[0] - 1}), got {tau.shape}"
            )
        check_scalar(self.gamma, "gamma", min_val=0.0, max_val=1.0, include_max=False)
        check_state_indices(np.asarray([self.s0]), S, "s0")
        for name, arr in (("phi", phi), ("psi", psi), ("thetas", thetas), ("tau", tau)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "s0", int(self.s0))

    @property
    def num_constraints(self) -> int:
        return self.thetas.shape[0] - 1

    @property
    def d_psi(self) -> float:
        # rows of psi are distributions, so sum_s |psi_i(s)| = 1 for every i
        return 1.0

    @property
    def rewards(self) -> np.ndarray:
        """Reward table of shape ``(I+1, S*A)``."""
        return self.thetas @ self.phi.T

    def features(self, states) -> np.ndarray:
        """Feature rows ``phi(s, .)`` for each requested state, shape ``(m, A, d)``."""
        states = check_state_indices(np.asarray(states), self.num_states)
        return self.phi.reshape(self.num_states, self.num_actions, self.dim)[states]

    def with_tau(self, tau) -> "LinearCmdp":
        return LinearCmdp(
            self.num_states, self.num_actions, self.dim, self.phi, self.psi,
            self.thetas, self.gamma, self.s0, np.asarray(tau, dtype=float),
        )

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "dim": self.dim,
            "gamma": self.gamma,
            "s0": self.s0,
            "phi": self.phi.ravel().tolist(),
            "psi": self.psi.ravel().tolist(),
            "thetas": self.thetas.tolist(),
            "tau": self.tau.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearCmdp":
        S, A, d = int(doc["num_states"]), int(doc["num_actions"]), int(doc["dim"])
        return cls(
            num_states=S,
            num_actions=A,
            dim=d,
            phi=np.asarray(doc["phi"], dtype=float).reshape(S * A, d),
            psi=np.asarray(doc["psi"], dtype=float).reshape(d, S),
            thetas=np.asarray(doc["thetas"], dtype=float).reshape(-1, d),
            gamma=float(doc["gamma"]),
            s0=int(doc["s0"]),
            tau=np.asarray(doc.get("tau", []), dtype=float).reshape(-1),
        )

    def to_json(self) -> str:
        # float repr is the shortest string that round-trips bit-exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LinearCmdp":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "LinearCmdp":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    probs: np.ndarray

    def __post_init__(self):
        probs = check_simplex_rows(self.probs, "policy probs")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=np.intp)
        probs = np.zeros((actions.size, num_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)


@dataclass(frozen=True, eq=False)
class ExactEval:
    """Exact quantities of one policy under one (linearized) reward.

    ``j`` is the return of the evaluated reward ``r_0 + w . r``; ``js`` holds
    the return of every individual reward ``r_0, ..., r_I``.
    """

    v: np.ndarray
    q: np.ndarray
    zeta: np.ndarray
    j: float
    mu: np.ndarray
    lambda_pi: np.ndarray
    nu: np.ndarray
    js: np.ndarray


@dataclass(frozen=True)
class ConstrainedOptimum:
    """Dual-grid solution of a one-constraint CMDP.

    ``j0_star`` is the minimum of the dual function over the grid, an upper
    bound on the constrained optimum.  ``mu_star`` is the occupancy of a
    feasible policy attaining ``j0_feasible`` (a lower bound).
    """

    j0_star: float
    slater_margin: float
    w_star: float
    mu_star: np.ndarray
    j0_feasible: float


def build_random_cmdp(seed: int, sizes, gamma: float) -> LinearCmdp:
    """Draw a linear CMDP with simplex features, simplex ``psi`` rows and
    uniform ``[0, 1]`` reward parameters.  Thresholds are all zero; set them
    with :meth:`LinearCmdp.with_tau`."""
    if len(sizes) != 4:
        raise ValueError("sizes must be (num_states, num_actions, dim, num_constraints)")
    S, A, d, I = (int(x) for x in sizes)
    if S < 1 or A < 1 or I < 0:
        raise ValueError(f"invalid sizes {tuple(sizes)}")
    if not 1 <= d <= S * A:
        raise ValueError(f"dim must be in [1, S*A={S * A}], got {d}")
    check_scalar(gamma, "gamma", min_val=0.0, max_val=1.0, include_min=False, include_max=False)
    rng = np.random.default_rng(seed)
    phi = rng.dirichlet(np.ones(d), size=S * A)
    psi = rng.dirichlet(np.ones(S), size=d)
    thetas = rng.uniform(0.0, 1.0, size=(I + 1, d))
    # dirichlet rows can be off from 1 by an ulp or two
    phi /= phi.sum(axis=1, keepdims=True)
    psi /= psi.sum(axis=1, keepdims=True)
    return LinearCmdp(S, A, d, phi, psi, thetas, gamma, 0, np.zeros(I))


def transition_matrix(mdp: LinearCmdp) -> np.ndarray:
    """``P[(s,a), s'] = <phi(s,a), psi(s')>``."""
    return mdp.phi @ mdp.psi


def _policy_matrices(mdp: LinearCmdp, probs: np.ndarray, reward: np.ndarray):
    S, A = mdp.num_states, mdp.num_actions
    P = transition_matrix(mdp).reshape(S, A, S)
    P_pi = np.einsum("sa,sat->st", probs, P)
    r_pi = np.einsum("sa,sa->s", probs, reward.reshape(S, A))
    return P_pi, r_pi


def exact_eval(mdp: LinearCmdp, pi: TabularPolicy, w=None) -> ExactEval:
    """Evaluate ``pi`` exactly for the reward ``r_0 + w . r`` by dense solves."""
    S, A = mdp.num_states, mdp.num_actions
    probs = np.asarray(pi.probs)
    if probs.shape != (S, A):
        raise ValueError(f"policy must have shape {(S, A)}, got {probs.shape}")
    I = mdp.num_constraints
    w = np.zeros(I) if w is None else check_array(w, ndim=1, name="w")
    if w.shape != (I,):
        raise ValueError(f"w must have length {I}, got {w.shape}")
    if np.any(w < 0):
        raise ValueError("w must be nonnegative")
    gamma = mdp.gamma
    theta_w = mdp.thetas[0] + mdp.thetas[1:].T @ w
    reward = mdp.phi @ theta_w
    P_pi, r_pi = _policy_matrices(mdp, probs, reward)
    eye = np.eye(S)
    v = linalg.solve(eye - gamma * P_pi, r_pi)
    q = reward + gamma * (transition_matrix(mdp) @ v)
    zeta = theta_w + gamma * (mdp.psi @ v)
    nu0 = np.zeros(S)
    nu0[mdp.s0] = 1.0
    state_occ = (1.0 - gamma) * linalg.solve(eye - gamma * P_pi.T, nu0)
    mu = (state_occ[:, None] * probs).ravel()
    lambda_pi = mdp.phi.T @ mu
    nu = (1.0 - gamma) * nu0 + gamma * (mdp.psi.T @ lambda_pi)
    js = mdp.rewards @ mu
    return ExactEval(
        v=v, q=q, zeta=zeta, j=float(reward @ mu), mu=mu,
        lambda_pi=lambda_pi, nu=nu, js=js,
    )


def _value_iteration(mdp: LinearCmdp, reward: np.ndarray, tol: float) -> np.ndarray:
    """Greedy actions after value iteration to a ``tol``-optimal stopping gap."""
    S, A, gamma = mdp.num_states, mdp.num_actions, mdp.gamma
    P = transition_matrix(mdp)
    reward = reward.reshape(S, A)
    # ||V_{k+1} - V_k|| <= eps (1-g)/(2g) makes the greedy policy eps-optimal
    # in unnormalized value; normalized returns are then within (1-g) eps.
    stop = tol * (1.0 - gamma) / (2.0 * gamma) if gamma > 0 else np.inf
    v = np.zeros(S)
    while True:
        q = reward + gamma * (P @ v).reshape(S, A)
        v_new = q.max(axis=1)
        gap = np.max(np.abs(v_new - v))
        v = v_new
        if gap <= stop:
            break
    q = reward + gamma * (P @ v).reshape(S, A)
    return q.argmax(axis=1)


def optimal_unconstrained(mdp: LinearCmdp, tol: float = 1e-10):
    """Optimal deterministic policy for ``r_0`` and its exact return."""
    check_scalar(tol, "tol", min_val=0.0, include_min=False)
    actions = _value_iteration(mdp, mdp.phi @ mdp.thetas[0], tol)
    pi = TabularPolicy.deterministic(actions, mdp.num_actions)
    return pi, exact_eval(mdp, pi).j


def optimal_constrained(mdp: LinearCmdp, tau=None, grid: int = 1000, *, tol: float = 1e-10):
    """Solve a one-constraint CMDP through its one-dimensional dual.

    The dual function ``g(w) = max_pi J_0(pi) + w (J_1(pi) - tau)`` is
    evaluated on a uniform grid over ``[0, W_max]`` with ``W_max = 2 / phi_0``
    where ``phi_0 = max_pi J_1(pi) - tau`` bounds the optimal multiplier, then
    refined by a bounded scalar minimization around the best grid point.
    """
    if mdp.num_constraints != 1:
        raise NotImplementedError(
            f"constrained oracle supports exactly one constraint, got {mdp.num_constraints}"
        )
    check_count(grid, "grid", min_val=100)
    tau = float(mdp.tau[0] if tau is None else np.asarray(tau, dtype=float).reshape(-1)[0])
    r0 = mdp.phi @ mdp.thetas[0]
    r1 = mdp.phi @ mdp.thetas[1]

    cache: dict[float, tuple[float, float, np.ndarray]] = {}

    def greedy(w: float):
        if w not in cache:
            actions = _value_iteration(mdp, r0 + w * r1, tol)
            ev = exact_eval(mdp, TabularPolicy.deterministic(actions, mdp.num_actions))
            cache[w] = (float(ev.js[0]), float(ev.js[1]), ev.mu)
        return cache[w]

    def dual(w: float) -> float:
        j0, j1, _ = greedy(w)
        return j0 + w * (j1 - tau)

    r1_actions = _value_iteration(mdp, r1, tol)
    ev1 = exact_eval(mdp, TabularPolicy.deterministic(r1_actions, mdp.num_actions))
    phi0 = float(ev1.js[1]) - tau
    if phi0 < 0:
        raise InfeasibleError(
            f"max_pi J_1(pi) = {ev1.js[1]:.6g} is below the threshold tau = {tau:.6g}"
        )

    j0_0, j1_0, mu_0 = greedy(0.0)
    if j1_0 >= tau:
        # constraint inactive: the unconstrained optimum is feasible
        margin = max(phi0, j1_0 - tau)
        return ConstrainedOptimum(j0_0, margin, 0.0, mu_0, j0_0)
    if phi0 == 0:
        raise InfeasibleError("constraint can only be met with zero slack")

    w_max = 2.0 / phi0
    ws = np.linspace(0.0, w_max, grid)
    vals = np.array([dual(w) for w in ws])
    k = int(np.argmin(vals))
    lo, hi = ws[max(k - 1, 0)], ws[min(k + 1, grid - 1)]
    res = optimize.minimize_scalar(dual, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    w_star, j0_star = (float(res.x), float(res.fun)) if res.fun < vals[k] else (float(ws[k]), float(vals[k]))

    margin = max([phi0] + [j1 - tau for (_, j1, _) in cache.values()])

    # a feasible optimal policy mixes the greedy policies on either side of w*
    feas = [(w, v) for w, v in cache.items() if v[1] >= tau]
    infeas = [(w, v) for w, v in cache.items() if v[1] < tau]
    w_hi, (j0_hi, j1_hi, mu_hi) = min(feas, key=lambda item: item[0])
    w_lo, (j0_lo, j1_lo, mu_lo) = max((it for it in infeas if it[0] <= w_hi), key=lambda item: item[0])
    p = (tau - j1_lo) / (j1_hi - j1_lo)
    mu_star = p * mu_hi + (1.0 - p) * mu_lo
    j0_feasible = p * j0_hi + (1.0 - p) * j0_lo
    return ConstrainedOptimum(j0_star, margin, w_star, mu_star, float(j0_feasible))


# Lagrangians --------------------------------------------------------------
#
# These need the unknown measures psi and are used only as oracles in tests
# and diagnostics; the solver never calls them.


def _pi_probs(pi) -> np.ndarray:
    return np.asarray(pi.probs if isinstance(pi, TabularPolicy) else pi)


def lagrangian_f(mdp: LinearCmdp, zeta, lam, pi, *, form: int = 2) -> float:
    """Unconstrained Lagrangian in ``(zeta, lambda, pi)``."""
    return lagrangian_g(mdp, zeta, lam, np.zeros(mdp.num_constraints), pi, form=form, tau=np.zeros(mdp.num_constraints))


def lagrangian_g(mdp: LinearCmdp, zeta, lam, w, pi, *, form: int = 2, tau=None) -> float:
    """Constrained Lagrangian in ``(zeta, lambda, w, pi)``.

    ``form=1`` expands through the parameterized occupancy ``mu_{lambda,pi}``;
    ``form=2`` through the parameterized value ``v_{zeta,pi}``.  The two are
    algebraically equal.
    """
    S, A, gamma = mdp.num_states, mdp.num_actions, mdp.gamma
    probs = _pi_probs(pi)
    zeta = np.asarray(zeta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    w = np.asarray(w, dtype=float).reshape(-1)
    tau = mdp.tau if tau is None else np.asarray(tau, dtype=float)
    theta0, Theta = mdp.thetas[0], mdp.thetas[1:].T
    penalty = -float(w @ (tau - Theta.T @ lam)) if w.size else 0.0
    nu0 = np.zeros(S)
    nu0[mdp.s0] = 1.0
    if form == 1:
        state_mass = (1.0 - gamma) * nu0 + gamma * (mdp.psi.T @ lam)
        mu = (probs * state_mass[:, None]).ravel()
        return float(lam @ theta0 + zeta @ (mdp.phi.T @ mu - lam)) + penalty
    if form == 2:
        v = np.einsum("sa,sa->s", probs, (mdp.phi @ zeta).reshape(S, A))
        return float((1.0 - gamma) * v[mdp.s0] + lam @ (theta0 + gamma * (mdp.psi @ v) - zeta)) + penalty
    raise ValueError(f"form must be 1 or 2, got {form}")


def lagrangian_value(mdp: LinearCmdp, pi, w, tau=None) -> float:
    """``L(pi, w) = J_0(pi) + w . (J(pi) - tau)``."""
    tau = mdp.tau if tau is None else np.asarray(tau, dtype=float)
    js = exact_eval(mdp, TabularPolicy(_pi_probs(pi))).js
    w = np.asarray(w, dtype=float).reshape(-1)
    return float(js[0] + w @ (js[1:] - tau))
