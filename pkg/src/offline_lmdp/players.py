"""Per-iteration strategies of the primal-dual game.

* policy player: exponentiated updates, i.e. softmax of accumulated ``Phi zeta``;
* zeta player: linear minimization over a Euclidean ball;
* w player: linear minimization over a scaled simplex ``{w >= 0, sum w <= D}``;
* lambda player: projected online gradient ascent on dataset coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from .spanner import CoefLambda

__all__ = [
    "SoftmaxPolicy",
    "PlayerBounds",
    "softmax_at",
    "pi_update",
    "zeta_greedy",
    "simplex_vertex_argmin",
    "w_greedy",
    "oco_step",
    "default_alpha",
    "default_eta",
]


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Policy ``pi(a|s) ∝ exp(<phi(s,a), z>)``."""

    z: np.ndarray

    @classmethod
    def uniform(cls, dim: int) -> "SoftmaxPolicy":
        return cls(np.zeros(dim))

    def probs(self, feats: np.ndarray) -> np.ndarray:
        """Action probabilities for stacked features of shape ``(m, A, d)``."""
        return softmax_rows(_linear(feats, self.z))

    def tabular(self, model) -> np.ndarray:
        """Full ``(S, A)`` table; needs every state so it is for evaluation only."""
        return self.probs(model.features(np.arange(model.num_states)))


@dataclass(frozen=True)
class PlayerBounds:
    """Radii and step sizes shared by the players.

    ``d_zeta`` is the radius of the zeta ball, ``d_w`` the scale of the
    multiplier simplex, ``d_pi`` the policy-parameter radius, ``alpha`` the
    policy step, ``oco_step`` the coefficient step and ``c_star`` the box
    bound on coefficients.
    """

    d_zeta: float
    d_w: float
    d_pi: float
    alpha: float
    oco_step: float
    c_star: float

    def __post_init__(self):
        for name in ("d_zeta", "c_star"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("d_w", "d_pi", "alpha", "oco_step"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")

    @staticmethod
    def zeta_radius(dim: int, gamma: float, d_w: float | None = None, d_psi: float = 1.0) -> float:
        root_d = math.sqrt(dim)
        if d_w is None:
            return root_d + gamma * d_psi * root_d / (1.0 - gamma)
        return 1.0 + d_w + gamma * root_d * (1.0 + d_w) / (1.0 - gamma)

    @classmethod
    def build(
        cls,
        *,
        dim: int,
        num_actions: int,
        gamma: float,
        n: int,
        t_iters: int,
        c_star: float,
        d_w: float | None = None,
        alpha: float | None = None,
        eta: float | None = None,
        d_psi: float = 1.0,
    ) -> "PlayerBounds":
        """Bounds from problem sizes; ``d_w=None`` selects the unconstrained radius."""
        d_zeta = cls.zeta_radius(dim, gamma, d_w, d_psi)
        if alpha is None:
            alpha = default_alpha(num_actions, dim, gamma, t_iters)
        grad = gradient_bound(dim, gamma, d_zeta, 0.0 if d_w is None else d_w)
        if eta is None:
            eta = default_eta(c_star, n, grad, t_iters)
        return cls(
            d_zeta=d_zeta,
            d_w=0.0 if d_w is None else float(d_w),
            d_pi=alpha * t_iters * d_zeta,
            alpha=float(alpha),
            oco_step=float(eta),
            c_star=float(c_star),
        )

    def with_(self, **changes) -> "PlayerBounds":
        return replace(self, **changes)


def default_alpha(num_actions: int, dim: int, gamma: float, t_iters: int) -> float:
    return (1.0 - gamma) * math.sqrt(math.log(num_actions) / (dim * t_iters))


def gradient_bound(dim: int, gamma: float, d_zeta: float, d_w: float = 0.0) -> float:
    """Bound on the norm of the lambda-player's linear objective."""
    return 1.0 + d_w + d_zeta + gamma * d_zeta * math.sqrt(dim)


def default_eta(bound: float, n: int, grad: float, t_iters: int) -> float:
    """OGD step ``diam / (G_c sqrt(T))`` in coefficient space.

    The box ``[-B, B]^n`` has diameter ``2 B sqrt(n)`` and the coefficient
    gradient ``(1/n) Phi_D xi`` has norm at most ``G / sqrt(n)``.
    """
    return 2.0 * bound * n / (grad * math.sqrt(t_iters))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of an ``(m, A)`` array, in place.

    Loops over the (few) action columns, which beats axis reductions on a
    short trailing axis.
    """
    cols = logits.T
    top = cols[0].copy()
    for col in cols[1:]:
        np.maximum(top, col, out=top)
    logits -= top[:, None]
    np.exp(logits, out=logits)
    total = cols[0].copy()
    for col in cols[1:]:
        total += col
    logits /= total[:, None]
    return logits


def _linear(feats: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """``<phi(s,a), vec>`` for stacked features, via one flat matrix-vector product."""
    m, A, d = feats.shape
    return (feats.reshape(m * A, d) @ vec).reshape(m, A)


def softmax_at(pol: SoftmaxPolicy, s: int, model) -> np.ndarray:
    return pol.probs(model.features([s]))[0]


def pi_update(pol: SoftmaxPolicy, zeta, alpha: float) -> SoftmaxPolicy:
    """One exponentiated step: ``z <- z + alpha * zeta``."""
    return SoftmaxPolicy(pol.z + alpha * np.asarray(zeta, dtype=float))


def zeta_greedy(g, d_zeta: float) -> np.ndarray:
    """Minimizer of ``<zeta, g>`` over the ball of radius ``d_zeta``."""
    g = np.asarray(g, dtype=float)
    norm = np.linalg.norm(g)
    if norm <= 1e-14:
        return np.zeros_like(g)
    return -d_zeta * g / norm


def simplex_vertex_argmin(g, d_w: float) -> np.ndarray:
    """Minimizer of ``<w, g>`` over ``{w >= 0, sum w <= d_w}``.

    The minimum sits at a vertex: zero if ``g >= 0``, else ``d_w`` on the most
    negative coordinate (lowest index on ties).
    """
    g = np.asarray(g, dtype=float)
    w = np.zeros_like(g)
    if g.size and g.min() < 0:
        w[int(np.argmin(g))] = d_w
    return w


def w_greedy(lam, thetas, tau, d_w: float) -> np.ndarray:
    """Multiplier best response to ``lambda``.

    ``thetas`` is ``(I+1, d)`` or the ``(d, I)`` constraint matrix; only the
    constraint parameters are used.  The Lagrangian depends on ``w`` through
    ``-<w, tau - Theta^T lambda>``, so its minimizer over ``d_w * simplex``
    loads the most violated constraint ``tau_i - <theta_i, lambda> > 0``.
    """
    tau = np.asarray(tau, dtype=float).reshape(-1)
    Theta = _constraint_matrix(thetas, tau.size)
    return simplex_vertex_argmin(Theta.T @ np.asarray(lam, dtype=float) - tau, d_w)


def _constraint_matrix(thetas, num_constraints: int) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim == 2 and thetas.shape[0] == num_constraints + 1:
        return thetas[1:].T
    if thetas.ndim == 2 and thetas.shape[1] == num_constraints:
        return thetas
    raise ValueError(f"cannot read {num_constraints} constraint vectors from shape {thetas.shape}")


def oco_step(c: CoefLambda, xi_hat, ds, eta: float, bound: float) -> CoefLambda:
    """Projected gradient ascent on ``<lambda(c), xi_hat>`` over ``[-B, B]^n``."""
    X = ds.feature_rows
    n = X.shape[0]
    grad = X @ np.asarray(xi_hat, dtype=float) / n
    coefs = np.clip(c.coefs + eta * grad, -bound, bound)
    return CoefLambda(coefs, float(bound), coefs @ X / n)
