"""Hyperbolically truncated multi-index sets and monomial basis evaluation.

The regression basis over a feature vector xi is the set of monomials
P_alpha(xi) = prod_j xi_j^alpha_j with exponent vectors alpha restricted by
the hyperbolic truncation ||alpha||_q = (sum alpha_j^q)^(1/q) <= d. For
q = 1 this is the usual total-degree set; q < 1 progressively removes
high-order interaction terms while keeping pure powers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Mapping, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError

# Tolerance on the q-norm boundary test; fractional powers produce
# representation noise at exact-boundary indices.
Q_NORM_TOL = 1e-9


@dataclass(frozen=True)
class MultiIndexSet:
    """Ordered set of exponent vectors plus its generating parameters.

    ``indices`` has shape (n_terms, n_features); ordering is graded
    lexicographic (total degree first, then lexicographic with the leading
    feature varying slowest), and the zero index (intercept) is always
    present.
    """

    indices: np.ndarray
    degree: int
    q_norm: float

    @property
    def n_terms(self) -> int:
        return self.indices.shape[0]

    @property
    def n_features(self) -> int:
        return self.indices.shape[1]

    def to_dict(self) -> dict:
        return {
            "indices": self.indices.tolist(),
            "degree": self.degree,
            "q_norm": self.q_norm,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "MultiIndexSet":
        return MultiIndexSet(
            indices=np.asarray(d["indices"], dtype=np.int64).reshape(
                len(d["indices"]), -1
            ),
            degree=int(d["degree"]),
            q_norm=float(d["q_norm"]),
        )


def q_norm_value(alpha: Sequence[int], q: float) -> float:
    """(sum alpha_j^q)^(1/q); 0 for the zero index."""
    a = np.asarray(alpha, dtype=np.float64)
    s = float(np.sum(a[a > 0] ** q))
    return s ** (1.0 / q) if s > 0 else 0.0


def _graded_lex_key(alpha: Tuple[int, ...]) -> Tuple:
    return (sum(alpha), tuple(-x for x in alpha))


def generate_hyperbolic_set(
    n_features: int, degree: int, q_norm: float
) -> MultiIndexSet:
    """All exponent vectors with ||alpha||_q <= degree (tolerance 1e-9).

    Uses depth-first enumeration over total degree <= d (a superset for
    q <= 1) with the q-norm filter, then graded-lex ordering.
    """
    if n_features < 1:
        raise ConfigError(f"n_features must be >= 1, got {n_features}")
    if degree < 0:
        raise ConfigError(f"degree must be >= 0, got {degree}")
    if not 0 < q_norm <= 1:
        raise ConfigError(f"q_norm must be in (0, 1], got {q_norm}")

    found: List[Tuple[int, ...]] = []
    alpha = [0] * n_features

    def recurse(pos: int, remaining_degree: int) -> None:
        if pos == n_features:
            # Total degree <= d is a superset of the hyperbolic set for
            # q <= 1; apply the literal boundary test with tolerance here.
            if q_norm_value(alpha, q_norm) <= degree + Q_NORM_TOL:
                found.append(tuple(alpha))
            return
        for e in range(remaining_degree + 1):
            alpha[pos] = e
            recurse(pos + 1, remaining_degree - e)
        alpha[pos] = 0

    recurse(0, degree)
    found.sort(key=_graded_lex_key)
    indices = np.array(found, dtype=np.int64).reshape(len(found), n_features)
    return MultiIndexSet(indices=indices, degree=degree, q_norm=q_norm)


def evaluate_basis(features: np.ndarray, index_set: MultiIndexSet) -> np.ndarray:
    """Monomial values P_alpha(features) for every alpha, in set order.

    A zero exponent contributes factor 1, including for feature value 0.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != index_set.n_features:
        raise DataError(
            f"feature vector of length {x.shape} does not match "
            f"{index_set.n_features}-feature basis"
        )
    return evaluate_basis_matrix(x[None, :], index_set)[0]


def evaluate_basis_matrix(
    features: np.ndarray, index_set: MultiIndexSet
) -> np.ndarray:
    """Row-wise basis evaluation: (n_rows, n_terms) monomial matrix."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != index_set.n_features:
        raise DataError(
            f"feature matrix of shape {X.shape} does not match "
            f"{index_set.n_features}-feature basis"
        )
    out = np.ones((X.shape[0], index_set.n_terms))
    indices = index_set.indices
    for j in range(index_set.n_features):
        exps = indices[:, j]
        for e in np.unique(exps[exps > 0]):
            cols = np.flatnonzero(exps == e)
            out[:, cols] *= (X[:, j] ** int(e))[:, None]
    return out
