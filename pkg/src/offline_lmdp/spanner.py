"""Barycentric spanners of dataset features and coefficient conversion.

A coefficient vector ``c`` over dataset indices stands for the feature-space
point ``lambda(c) = (1/n) sum_k c_k phi(s_k, a_k)``.  The spanner lets any such
vector be re-expressed with support on at most ``d`` indices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._validation import check_array, check_scalar

__all__ = [
    "Spanner",
    "CoefLambda",
    "DegenerateFeaturesError",
    "compute_spanner",
    "convert_coeffs",
    "lambda_of",
]

logger = logging.getLogger(__name__)


class DegenerateFeaturesError(ValueError):
    """All dataset features are zero, so there is no span to work in."""


@dataclass(frozen=True, eq=False)
class Spanner:
    """Index set of a barycentric spanner and the conversion table.

    ``conversion[k, j]`` is the coefficient of ``basis[j]`` in the expansion of
    dataset row ``k``.
    """

    indices: np.ndarray
    basis: np.ndarray
    conversion: np.ndarray
    rank: int
    swaps: int = 0

    def __repr__(self):
        return f"Spanner(indices=[{','.join(map(str, self.indices))}], rank={self.rank})"


@dataclass(frozen=True, eq=False)
class CoefLambda:
    """Coefficients ``c`` together with the cached point ``lambda(c)``."""

    coefs: np.ndarray
    bound: float
    lam: np.ndarray

    @classmethod
    def from_coefs(cls, coefs, feature_rows, bound=None) -> "CoefLambda":
        coefs = np.asarray(coefs, dtype=float)
        bound = float(np.max(np.abs(coefs), initial=0.0)) if bound is None else float(bound)
        return cls(coefs, bound, lambda_of(coefs, feature_rows))

    @classmethod
    def zeros(cls, n: int, dim: int, bound: float) -> "CoefLambda":
        return cls(np.zeros(n), float(bound), np.zeros(dim))


def _feature_rows(ds):
    return ds.feature_rows if hasattr(ds, "feature_rows") else np.asarray(ds, dtype=float)


def lambda_of(c, ds) -> np.ndarray:
    """``(1/n) sum_k c_k phi_k`` over the cached dataset feature rows."""
    X = _feature_rows(ds)
    c = np.asarray(c, dtype=float)
    if c.shape != (X.shape[0],):
        raise ValueError(f"coefficient vector must have length {X.shape[0]}, got {c.shape}")
    return c @ X / X.shape[0]


def _max_swaps(d: int) -> int:
    return 64 * d * math.ceil(math.log2(d) + 1)


def compute_spanner(ds, c_approx: float = 2.0, *, rank_tol: float = 1e-10) -> Spanner:
    """``c_approx``-approximate barycentric spanner of the dataset features.

    Works in an orthonormal basis of the feature span, so rank-deficient
    datasets yield a spanner of size ``rank``.  Starting from a pivoted-QR
    basis, a basis vector is swapped for a dataset row whenever that row's
    coefficient on it exceeds ``c_approx`` in magnitude; each such swap grows
    the volume of the basis by that factor.
    """
    check_scalar(c_approx, "c_approx", min_val=1.0, include_min=False)
    X = check_array(_feature_rows(ds), ndim=2, name="feature rows")
    n, d = X.shape
    if n < 1:
        raise ValueError("need at least one feature row")
    _, sing, vt = linalg.svd(X, full_matrices=False)
    if sing.size == 0 or sing[0] == 0.0:
        raise DegenerateFeaturesError("all feature rows are zero")
    r = int(np.sum(sing > rank_tol * sing[0]))
    Y = X @ vt[:r].T  # coordinates within the span, shape (n, r)

    _, _, piv = linalg.qr(Y.T, mode="economic", pivoting=True)
    idx = np.array(piv[:r], dtype=np.intp)

    threshold = c_approx + 1e-12
    cap = _max_swaps(d)
    swaps = 0
    while True:
        coef = linalg.solve(Y[idx].T, Y.T).T  # row k: Y[k] = coef[k] @ Y[idx]
        k, j = np.unravel_index(np.argmax(np.abs(coef)), coef.shape)
        if abs(coef[k, j]) <= threshold:
            break
        if swaps >= cap:
            raise RuntimeError(f"spanner swap cap {cap} reached; features are ill-conditioned")
        idx[j] = k
        swaps += 1

    coef[idx, :] = np.eye(r)
    logger.debug("spanner indices %s after %d swaps", ",".join(map(str, idx)), swaps)
    return Spanner(indices=idx, basis=X[idx].copy(), conversion=coef, rank=r, swaps=swaps)


def convert_coeffs(c: CoefLambda, sp: Spanner) -> CoefLambda:
    """Move the weight of ``c`` onto the spanner indices.

    ``c'_j = sum_k b_kj c_k`` for ``j`` in the spanner and zero elsewhere, so
    ``lambda(c') = lambda(c)``.  The returned bound is ``max |c'_j|``.
    """
    coefs = np.asarray(c.coefs, dtype=float)
    if coefs.shape != (sp.conversion.shape[0],):
        raise ValueError(
            f"coefficient vector must have length {sp.conversion.shape[0]}, got {coefs.shape}"
        )
    on_basis = sp.conversion.T @ coefs
    out = np.zeros_like(coefs)
    out[sp.indices] = on_basis
    lam = on_basis @ sp.basis / coefs.shape[0]
    return CoefLambda(out, float(np.max(np.abs(on_basis), initial=0.0)), lam)
