"""Primal-dual solvers for offline linear MDPs and CMDPs.

The learner sees only the dataset and the known parts of the model: the
feature map (queried at ``s0`` and at dataset next states), the reward
parameters, the discount, ``s0`` and the thresholds.  The transition measures
never enter the solver.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_scalar
from .data import GramMatrix, OfflineDataset, gram_matrix
from .estimators import phi_mu_hat, psi_v_hat, v_values
from .model import LinearCmdp, TabularPolicy, exact_eval, transition_matrix
from .players import (
    PlayerBounds,
    SoftmaxPolicy,
    oco_step,
    pi_update,
    w_greedy,
    zeta_greedy,
)
from .spanner import CoefLambda, Spanner, compute_spanner, convert_coeffs

__all__ = [
    "MODES",
    "OCCUPANCY_ESTIMATES",
    "KnownModel",
    "SolverConfig",
    "MixturePolicy",
    "RunTrace",
    "SolverDivergenceError",
    "PrimalDualSolver",
    "default_t_iters",
    "solve",
    "evaluate_mixture",
]

MODES = ("unconstrained", "constrained", "constrained_exact_feasibility")
OCCUPANCY_ESTIMATES = ("converted", "dataset")


class SolverDivergenceError(ArithmeticError):
    """A non-finite value appeared in the solver iterates."""


@dataclass(frozen=True, eq=False)
class KnownModel:
    """The parts of a linear CMDP available to an offline learner."""

    features: Callable[[np.ndarray], np.ndarray]
    thetas: np.ndarray
    gamma: float
    s0: int
    num_actions: int
    dim: int
    tau: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_mdp(cls, mdp: LinearCmdp, features=None) -> "KnownModel":
        return cls(
            features=mdp.features if features is None else features,
            thetas=mdp.thetas,
            gamma=mdp.gamma,
            s0=mdp.s0,
            num_actions=mdp.num_actions,
            dim=mdp.dim,
            tau=mdp.tau,
        )

    @property
    def num_constraints(self) -> int:
        return self.thetas.shape[0] - 1


def default_t_iters(dim: int, num_actions: int, gamma: float, epsilon: float, cap: int = 10_000) -> int:
    """``ceil(d log|A| / ((1-g)^2 eps^2))``, at least 1 and at most ``cap``."""
    t = math.ceil(dim * math.log(num_actions) / ((1.0 - gamma) ** 2 * epsilon**2))
    return int(min(max(t, 1), cap))


@dataclass(frozen=True)
class SolverConfig:
    t_iters: int
    bounds: PlayerBounds
    mode: str = "unconstrained"
    epsilon: float = 0.1
    phi: float | None = None
    tau_input: np.ndarray | None = None
    seed: int = 0
    occupancy_estimate: str = "converted"

    def __post_init__(self):
        check_count(self.t_iters, "t_iters", min_val=1)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.occupancy_estimate not in OCCUPANCY_ESTIMATES:
            raise ValueError(
                f"occupancy_estimate must be one of {OCCUPANCY_ESTIMATES}, got {self.occupancy_estimate!r}"
            )
        if self.mode != "unconstrained":
            if self.phi is None or not self.phi > 0:
                raise ValueError(f"mode {self.mode!r} needs a positive Slater margin phi")
            if self.tau_input is None:
                raise ValueError(f"mode {self.mode!r} needs tau_input")
            expected_dw = 4.0 / self.phi if self.mode == "constrained_exact_feasibility" else 1.0 + 1.0 / self.phi
            if np.size(self.tau_input) == 0:
                expected_dw = self.bounds.d_w  # no constraints: the w player is vacuous
            if not math.isclose(self.bounds.d_w, expected_dw, rel_tol=1e-12):
                raise ValueError(f"mode {self.mode!r} needs d_w = {expected_dw}, got {self.bounds.d_w}")

    @classmethod
    def build(
        cls,
        known: KnownModel,
        n: int,
        *,
        mode: str = "unconstrained",
        t_iters: int | None = None,
        epsilon: float = 0.1,
        phi: float | None = None,
        c_star: float = 1.0,
        alpha: float | None = None,
        eta: float | None = None,
        max_iters: int = 10_000,
        seed: int = 0,
        occupancy_estimate: str = "converted",
    ) -> "SolverConfig":
        """Derive every bound and step size from the known model."""
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if t_iters is None:
            t_iters = default_t_iters(known.dim, known.num_actions, known.gamma, epsilon, max_iters)
        check_count(t_iters, "t_iters", min_val=1)
        tau_input = None
        d_w = None
        if mode != "unconstrained" and known.num_constraints == 0:
            # without constraints both constrained modes reduce to the plain loop
            if phi is None or not phi > 0:
                raise ValueError(f"mode {mode!r} needs a positive Slater margin phi")
            tau_input = np.zeros(0)
        elif mode != "unconstrained":
            if phi is None or not phi > 0:
                raise ValueError(f"mode {mode!r} needs a positive Slater margin phi")
            tau = np.asarray(known.tau, dtype=float)
            if mode == "constrained":
                d_w, tau_input = 1.0 + 1.0 / phi, tau.copy()
            else:
                d_w, tau_input = 4.0 / phi, tau + phi * epsilon
        bounds = PlayerBounds.build(
            dim=known.dim, num_actions=known.num_actions, gamma=known.gamma, n=n,
            t_iters=t_iters, c_star=c_star, d_w=d_w, alpha=alpha, eta=eta,
        )
        return cls(t_iters, bounds, mode, epsilon, phi, tau_input, seed, occupancy_estimate)


@dataclass(frozen=True, eq=False)
class MixturePolicy:
    """Uniform mixture over the softmax iterates; ``zs[t]`` parameterizes ``pi_{t+1}``."""

    zs: np.ndarray
    alpha: float

    @property
    def t_iters(self) -> int:
        return self.zs.shape[0]

    def policy(self, t: int) -> SoftmaxPolicy:
        return SoftmaxPolicy(self.zs[t])

    def tabular(self, model) -> np.ndarray:
        """Action probabilities of every iterate at every state, ``(T, S, A)``."""
        feats = model.features(np.arange(model.num_states))
        logits = np.einsum("sad,td->tsa", feats, self.zs)
        logits -= logits.max(axis=-1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=-1, keepdims=True)

    def to_json(self) -> str:
        return json.dumps({"alpha": self.alpha, "zs": self.zs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "MixturePolicy":
        doc = json.loads(text)
        zs = np.asarray(doc["zs"], dtype=float)
        return cls(zs.reshape(len(doc["zs"]), -1), float(doc["alpha"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "MixturePolicy":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class RunTrace:
    """Per-iteration records; ``returns`` is filled only when an oracle is attached."""

    zeta_objective: np.ndarray
    lambda_norm: np.ndarray
    ws: np.ndarray
    zetas: np.ndarray
    lambdas: np.ndarray
    returns: np.ndarray | None = None

    def __len__(self):
        return self.zeta_objective.shape[0]


def solve(
    ds: OfflineDataset,
    known: KnownModel,
    cfg: SolverConfig,
    *,
    oracle: LinearCmdp | None = None,
    spanner: Spanner | None = None,
    gram: GramMatrix | None = None,
) -> tuple[MixturePolicy, RunTrace]:
    """Run the primal-dual loop for ``cfg.t_iters`` iterations.

    Each iteration: the zeta player answers the plug-in occupancy gap, the
    w player answers the current ``lambda`` (constrained modes), the lambda
    player takes a projected ascent step on the estimated objective gradient,
    its coefficients are moved onto the spanner, and the policy takes an
    exponentiated step along ``zeta``.
    """
    if ds.dim != known.dim:
        raise ValueError(f"dataset features have dim {ds.dim}, model has {known.dim}")
    n, d, T = ds.n, known.dim, cfg.t_iters
    gamma = known.gamma
    b = cfg.bounds
    constrained = cfg.mode != "unconstrained"
    thetas = np.asarray(known.thetas, dtype=float)
    theta0 = thetas[0]
    if constrained:
        tau_in = np.asarray(cfg.tau_input, dtype=float).reshape(-1)
        if tau_in.shape != (known.num_constraints,):
            raise ValueError(f"tau_input must have {known.num_constraints} entries, got {tau_in.shape}")
        Theta = thetas[1:].T
    else:
        tau_in = np.zeros(0)
        Theta = np.zeros((d, 0))
    num_w = tau_in.size

    sp = compute_spanner(ds) if spanner is None else spanner
    gram = gram_matrix(ds) if gram is None else gram
    next_feats = ds.next_features(known)

    zs = np.empty((T, d))
    zetas = np.empty((T, d))
    lambdas = np.empty((T, d))
    ws = np.zeros((T, num_w))
    zeta_obj = np.empty(T)
    lam_norm = np.empty(T)

    pol = SoftmaxPolicy.uniform(d)
    c = CoefLambda.zeros(n, d, b.c_star)
    c_conv = c
    use_converted = cfg.occupancy_estimate == "converted"
    for t in range(T):
        zs[t] = pol.z
        lam = c_conv.lam
        c_est = c_conv if use_converted else c
        g = phi_mu_hat(c_est, pol, ds, known, next_feats=next_feats) - lam
        zeta = zeta_greedy(g, b.d_zeta)
        xi = theta0 - zeta
        if num_w:
            w = w_greedy(lam, Theta, tau_in, b.d_w)
            ws[t] = w
            xi = xi + Theta @ w
        vals = v_values(zeta, pol, ds, known, next_feats=next_feats)
        if not (np.all(np.isfinite(vals.at_next)) and np.all(np.isfinite(zeta))):
            raise SolverDivergenceError(f"non-finite iterate at iteration {t + 1}")
        xi = xi + gamma * psi_v_hat(vals, ds, gram)
        zetas[t] = zeta
        lambdas[t] = lam
        zeta_obj[t] = zeta @ g
        lam_norm[t] = np.linalg.norm(lam)
        c = oco_step(c, xi, ds, b.oco_step, b.c_star)
        c_conv = convert_coeffs(c, sp)
        pol = pi_update(pol, zeta, b.alpha)

    mix = MixturePolicy(zs, b.alpha)
    returns = _iterate_returns(oracle, mix) if oracle is not None else None
    return mix, RunTrace(zeta_obj, lam_norm, ws, zetas, lambdas, returns)


def _iterate_returns(mdp: LinearCmdp, mix: MixturePolicy) -> np.ndarray:
    """Exact ``J_i(pi_t)`` for every iterate, shape ``(T, I+1)``."""
    S, A, gamma = mdp.num_states, mdp.num_actions, mdp.gamma
    probs = mix.tabular(mdp)
    P = transition_matrix(mdp).reshape(S, A, S)
    P_pi = np.einsum("tsa,sau->tsu", probs, P)
    nu0 = np.zeros(S)
    nu0[mdp.s0] = 1.0
    lhs = np.eye(S)[None] - gamma * np.transpose(P_pi, (0, 2, 1))
    rhs = np.broadcast_to(nu0, (probs.shape[0], S))[..., None]
    occ = (1.0 - gamma) * np.linalg.solve(lhs, rhs)[..., 0]
    mu = (occ[..., None] * probs).reshape(probs.shape[0], S * A)
    return mu @ mdp.rewards.T


def evaluate_mixture(mdp: LinearCmdp, mix: MixturePolicy) -> np.ndarray:
    """``(J_0, ..., J_I)`` of the trajectory-level uniform mixture."""
    return _iterate_returns(mdp, mix).mean(axis=0)


class PrimalDualSolver(BaseEstimator):
    """Offline primal-dual learner with an estimator interface.

    Parameters
    ----------
    mode : {"unconstrained", "constrained", "constrained_exact_feasibility"}
    t_iters : int or None
        Iterations; ``None`` derives it from ``epsilon``.
    epsilon : float
        Target accuracy; also sets the threshold tightening in exact-feasibility mode.
    slater_margin : float or None
        Known Slater margin, required by the constrained modes.
    c_star : float
        Known concentrability bound, the coefficient box size.
    alpha, eta : float or None
        Policy and coefficient step sizes; ``None`` uses the defaults.
    max_iters : int
        Cap on the derived ``t_iters``.
    occupancy_estimate : {"converted", "dataset"}
        Coefficients fed to the occupancy estimate.  ``"converted"`` uses the
        spanner-supported ``c'`` (a handful of next states carrying weights
        of order ``n``); ``"dataset"`` uses the unconverted ``c`` with
        ``|c_k| <= B``, which represents the same ``lambda`` but averages over
        every next state, so its noise shrinks with ``n``.

    Attributes
    ----------
    mixture_ : MixturePolicy
    trace_ : RunTrace
    config_ : SolverConfig
    spanner_ : Spanner
    gram_ : GramMatrix
    """

    def __init__(
        self,
        mode="unconstrained",
        t_iters=None,
        epsilon=0.1,
        slater_margin=None,
        c_star=1.0,
        alpha=None,
        eta=None,
        max_iters=10_000,
        occupancy_estimate="converted",
    ):
        self.mode = mode
        self.t_iters = t_iters
        self.epsilon = epsilon
        self.slater_margin = slater_margin
        self.c_star = c_star
        self.alpha = alpha
        self.eta = eta
        self.max_iters = max_iters
        self.occupancy_estimate = occupancy_estimate

    def fit(self, X: OfflineDataset, known: KnownModel, oracle: LinearCmdp | None = None):
        """Learn a mixture policy from dataset ``X``.

        ``oracle`` only fills ``trace_.returns`` and never affects iterates.
        """
        if not isinstance(X, OfflineDataset):
            raise TypeError(f"X must be an OfflineDataset, got {type(X).__name__}")
        check_scalar(self.epsilon, "epsilon", min_val=0.0, include_min=False)
        check_scalar(self.c_star, "c_star", min_val=0.0, include_min=False)
        self.config_ = SolverConfig.build(
            known, X.n, mode=self.mode, t_iters=self.t_iters, epsilon=self.epsilon,
            phi=self.slater_margin, c_star=self.c_star, alpha=self.alpha, eta=self.eta,
            max_iters=self.max_iters, occupancy_estimate=self.occupancy_estimate,
        )
        self.spanner_ = compute_spanner(X)
        self.gram_ = gram_matrix(X)
        self.mixture_, self.trace_ = solve(
            X, known, self.config_, oracle=oracle, spanner=self.spanner_, gram=self.gram_
        )
        return self

    def predict_proba(self, states, known: KnownModel) -> np.ndarray:
        """Per-iterate action probabilities at ``states``, shape ``(T, m, A)``."""
        check_is_fitted(self, "mixture_")
        feats = known.features(np.asarray(states))
        logits = np.einsum("mad,td->tma", feats, self.mixture_.zs)
        logits -= logits.max(axis=-1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=-1, keepdims=True)

    def predict(self, states, known: KnownModel, rng=None) -> np.ndarray:
        """Sample actions by drawing one iterate and acting with it at ``states``."""
        rng = np.random.default_rng(rng)
        probs = self.predict_proba(states, known)[rng.integers(self.mixture_.t_iters)]
        u = rng.random(probs.shape[0])[:, None]
        return (np.cumsum(probs, axis=1) > u * probs.sum(axis=1, keepdims=True)).argmax(axis=1)

    def score(self, mdp: LinearCmdp) -> float:
        """Exact objective return of the fitted mixture under ``mdp``."""
        check_is_fitted(self, "mixture_")
        return float(evaluate_mixture(mdp, self.mixture_)[0])
