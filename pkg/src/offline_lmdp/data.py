"""Offline datasets, empirical Gram matrices and concentrability."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

from ._validation import check_array, check_count, check_probability_vector, check_scalar
from .model import LinearCmdp, TabularPolicy, exact_eval, transition_matrix

__all__ = [
    "BehaviorDistribution",
    "OfflineDataset",
    "GramMatrix",
    "CoverageError",
    "sample_dataset",
    "gram_matrix",
    "concentrability",
    "occupancy_ratio_bound",
    "in_span",
]


class CoverageError(ValueError):
    """The target occupancy puts mass where the behavior distribution has none."""


@dataclass(frozen=True, eq=False)
class BehaviorDistribution:
    """Distribution over flattened state-action pairs."""

    probs: np.ndarray

    def __post_init__(self):
        probs = check_probability_vector(self.probs, "behavior distribution")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, num_pairs: int) -> "BehaviorDistribution":
        return cls(np.full(num_pairs, 1.0 / num_pairs))

    @classmethod
    def blend(cls, target_mu, kappa: float) -> "BehaviorDistribution":
        """``kappa * target + (1 - kappa) * uniform``; concentrability of the
        target is then at most ``1 / kappa``."""
        kappa = check_scalar(kappa, "kappa", min_val=0.0, max_val=1.0)
        target_mu = np.asarray(target_mu, dtype=float)
        probs = kappa * target_mu + (1.0 - kappa) / target_mu.size
        return cls(probs / probs.sum())


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    """``n`` transitions ``(s_k, a_k, s'_k)`` with cached ``phi(s_k, a_k)`` rows."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    feature_rows: np.ndarray

    def __post_init__(self):
        n = len(self.states)
        if n < 1:
            raise ValueError("dataset must hold at least one transition")
        arrays = {}
        for name in ("states", "actions", "next_states"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (n,) or arr.dtype.kind not in "iu":
                raise ValueError(f"{name} must be an integer vector of length {n}")
            arrays[name] = arr.astype(np.intp)
        feats = check_array(self.feature_rows, ndim=2, name="feature_rows")
        if feats.shape[0] != n:
            raise ValueError(f"feature_rows must have {n} rows, got {feats.shape[0]}")
        arrays["feature_rows"] = feats
        for name, arr in arrays.items():
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.feature_rows.shape[1]

    def next_features(self, model) -> np.ndarray:
        """``phi(s'_k, a)`` for every sample and action, shape ``(n, A, d)``.

        ``model`` is anything exposing ``features(states)``.
        """
        return model.features(self.next_states)

    @classmethod
    def from_triples(cls, states, actions, next_states, model) -> "OfflineDataset":
        states = np.asarray(states, dtype=np.intp)
        actions = np.asarray(actions, dtype=np.intp)
        feats = model.features(states)[np.arange(states.size), actions]
        return cls(states, actions, np.asarray(next_states, dtype=np.intp), feats)

    # CSV ---------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "s", "a", "s_next"])
        for k, (s, a, sn) in enumerate(zip(self.states, self.actions, self.next_states)):
            writer.writerow([k, int(s), int(a), int(sn)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, model) -> "OfflineDataset":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != ["k", "s", "a", "s_next"]:
            raise ValueError(f"expected header k,s,a,s_next, got {reader.fieldnames}")
        rows = sorted(((int(r["k"]), int(r["s"]), int(r["a"]), int(r["s_next"])) for r in reader))
        if not rows:
            raise ValueError("dataset CSV has no rows")
        ks = [r[0] for r in rows]
        if ks != list(range(len(rows))):
            raise ValueError("dataset CSV row indices must be 0..n-1")
        _, s, a, sn = map(list, zip(*rows))
        return cls.from_triples(s, a, sn, model)

    def save_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load_csv(cls, path, model) -> "OfflineDataset":
        return cls.from_csv(Path(path).read_text(), model)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Empirical second moment ``(1/n) sum phi_k phi_k^T`` and its inverses."""

    lambda_hat: np.ndarray
    pseudo_inverse: np.ndarray
    regularized_inverse: np.ndarray
    n: int

    @cached_property
    def regularized_factor(self):
        """Cholesky factor of ``n * lambda_hat + I``, reused across solves."""
        d = self.lambda_hat.shape[0]
        return linalg.cho_factor(self.n * self.lambda_hat + np.eye(d))

    def regularized_solve(self, rhs) -> np.ndarray:
        return linalg.cho_solve(self.regularized_factor, rhs)


def sample_dataset(mdp: LinearCmdp, mu_b: BehaviorDistribution, n: int, seed) -> OfflineDataset:
    """Draw ``n`` i.i.d. pairs from ``mu_b`` and next states from ``P``."""
    check_count(n, "n", min_val=1)
    if not isinstance(mu_b, BehaviorDistribution):
        mu_b = BehaviorDistribution(mu_b)
    S, A = mdp.num_states, mdp.num_actions
    if mu_b.probs.shape != (S * A,):
        raise ValueError(f"behavior distribution must cover {S * A} pairs, got {mu_b.probs.shape}")
    rng = np.random.default_rng(seed)
    pairs = rng.choice(S * A, size=n, p=mu_b.probs)
    cdf = np.cumsum(transition_matrix(mdp)[pairs], axis=1)
    u = rng.random(n) * cdf[:, -1]
    # first state whose cdf strictly exceeds u; zero-mass states are never hit
    next_states = (cdf > u[:, None]).argmax(axis=1)
    states, actions = np.divmod(pairs, A)
    return OfflineDataset(states, actions, next_states, mdp.phi[pairs])


def gram_matrix(ds: OfflineDataset, *, rcond: float = 1e-10) -> GramMatrix:
    X = ds.feature_rows
    n, d = X.shape
    lam = X.T @ X / n
    lam = 0.5 * (lam + lam.T)
    evals, evecs = linalg.eigh(lam)
    cutoff = rcond * max(evals.max(), 0.0)
    keep = evals > cutoff
    pinv = (evecs[:, keep] / evals[keep]) @ evecs[:, keep].T
    reg_inv = linalg.inv(n * lam + np.eye(d))
    return GramMatrix(lam, 0.5 * (pinv + pinv.T), 0.5 * (reg_inv + reg_inv.T), n)


def occupancy_ratio_bound(target_mu, mu_b) -> float:
    """``max mu_target / mu_b`` over the support of ``mu_b``.

    Pairs where both measures vanish are ignored.
    """
    target_mu = np.asarray(target_mu, dtype=float)
    probs = mu_b.probs if isinstance(mu_b, BehaviorDistribution) else np.asarray(mu_b, dtype=float)
    support = probs > 0
    uncovered = np.flatnonzero(~support & (target_mu > 0))
    if uncovered.size:
        raise CoverageError(f"target occupancy puts mass on pair {int(uncovered[0])} outside the behavior support")
    return float(np.max(target_mu[support] / probs[support]))


def concentrability(mdp: LinearCmdp, target: TabularPolicy, mu_b: BehaviorDistribution) -> float:
    """Concentrability coefficient ``C*`` of ``target`` under ``mu_b``."""
    mu = exact_eval(mdp, target).mu
    try:
        return occupancy_ratio_bound(mu, mu_b)
    except CoverageError:
        k = int(np.flatnonzero((mu_b.probs <= 0) & (mu > 0))[0])
        s, a = divmod(k, mdp.num_actions)
        raise CoverageError(
            f"target visits (s={s}, a={a}) with mass {mu[k]:.3g} but the behavior distribution does not"
        ) from None


def in_span(vec, rows, *, tol: float = 1e-9) -> bool:
    """Whether ``vec`` lies in the row span of ``rows``."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    vec = np.asarray(vec, dtype=float)
    coef, *_ = linalg.lstsq(rows.T, vec)
    return bool(np.linalg.norm(rows.T @ coef - vec) <= tol * max(1.0, np.linalg.norm(vec)))
