"""Data-driven estimates consumed by the solver.

Every function here touches the model only through ``features(states)`` at
the initial state and the dataset's next states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ValueAtStates", "policy_features", "v_values", "psi_v_hat", "phi_mu_hat"]


@dataclass(frozen=True, eq=False)
class ValueAtStates:
    """``v_{zeta,pi}`` at the initial state and at every next state."""

    at_s0: float
    at_next: np.ndarray


def _policy_probs(pi, feats: np.ndarray) -> np.ndarray:
    # local import keeps players -> estimators free of cycles
    from .players import SoftmaxPolicy

    if isinstance(pi, SoftmaxPolicy):
        return pi.probs(feats)
    probs = np.asarray(pi, dtype=float)
    if probs.shape != feats.shape[:2]:
        raise ValueError(f"policy probabilities must have shape {feats.shape[:2]}, got {probs.shape}")
    return probs


def policy_features(pi, feats: np.ndarray) -> np.ndarray:
    """``phi(s, pi) = sum_a pi(a|s) phi(s, a)`` for stacked features ``(m, A, d)``."""
    return np.einsum("ma,mad->md", _policy_probs(pi, feats), feats)


def v_values(zeta, pi, ds, model, *, next_feats=None) -> ValueAtStates:
    """Evaluate ``v(s) = sum_a pi(a|s) <zeta, phi(s,a)>`` at ``s0`` and each ``s'_k``.

    ``next_feats`` may carry precomputed ``ds.next_features(model)``.
    """
    zeta = np.asarray(zeta, dtype=float)
    if next_feats is None:
        next_feats = ds.next_features(model)
    f0 = model.features([model.s0])
    at_s0 = float(_state_values(zeta, pi, f0)[0])
    return ValueAtStates(at_s0, _state_values(zeta, pi, next_feats))


def _state_values(zeta, pi, feats):
    m, A, d = feats.shape
    q = (feats.reshape(m * A, d) @ zeta).reshape(m, A)
    q *= _policy_probs(pi, feats)
    return q.sum(axis=1) if q.shape[1] > 8 else sum(q.T)


def psi_v_hat(vals: ValueAtStates, ds, gram) -> np.ndarray:
    """Ridge estimate ``(n Lambda_hat + I)^{-1} sum_k v(s'_k) phi(s_k, a_k)``."""
    at_next = np.asarray(vals.at_next, dtype=float)
    if at_next.shape != (ds.n,):
        raise ValueError(f"need one value per sample ({ds.n}), got {at_next.shape}")
    return gram.regularized_solve(ds.feature_rows.T @ at_next)


def phi_mu_hat(c_prime, pi, ds, model, *, next_feats=None) -> np.ndarray:
    """Plug-in estimate of ``Phi^T mu_{lambda(c'), pi}``.

    Returns ``(1-g) phi(s0, pi) + (g/n) sum_k c'_k phi(s'_k, pi)``; only the
    samples with nonzero ``c'_k`` are touched.
    """
    coefs = np.asarray(getattr(c_prime, "coefs", c_prime), dtype=float)
    if coefs.shape != (ds.n,):
        raise ValueError(f"coefficient vector must have length {ds.n}, got {coefs.shape}")
    gamma = model.gamma
    f0 = model.features([model.s0])
    out = (1.0 - gamma) * policy_features(pi, f0)[0]
    support = np.flatnonzero(coefs)
    if support.size:
        feats = next_feats[support] if next_feats is not None else model.features(ds.next_states[support])
        out = out + (gamma / ds.n) * (coefs[support] @ policy_features(pi, feats))
    return out
