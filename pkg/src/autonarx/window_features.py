"""Sliding-window lag vectors and PCA temporal features.

Instead of feeding individual lagged samples to the regression, each
quantity contributes a macroscopic sliding window whose principal
components become candidate features. Windows are pooled across all
training realizations before the eigen-decomposition, so one extractor per
quantity maps any window to its feature coordinates.

Window conventions
------------------
``memory_steps`` is the window length in samples. With ``IncludeCurrent``
alignment the window at step t is ``[x(t), x(t-dt), ..., x(t-(m-1)dt)]``
(horizon m-1); with ``PastOnly`` (used for the model's own target) it is
``[x(t-dt), ..., x(t-m dt)]`` (horizon m). The first predictable step t0 of
an assembled feature matrix is the largest horizon over all window specs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError
from .signals import Dataset

# Relative eigenvalue floor below which a component is considered
# degenerate (zero variance up to noise) and excluded from the pool. Set
# well above eigh's ~eps*lambda_1 off-diagonal residuals so that kept
# feature columns stay uncorrelated to < 1e-8.
EIGENVALUE_FLOOR = 1e-7


class WindowAlignment(str, Enum):
    INCLUDE_CURRENT = "IncludeCurrent"
    PAST_ONLY = "PastOnly"


@dataclass(frozen=True)
class WindowSpec:
    """Sliding-window definition for one quantity."""

    quantity: str
    memory_steps: int
    alignment: WindowAlignment = WindowAlignment.INCLUDE_CURRENT

    def __post_init__(self):
        if self.memory_steps < 1:
            raise ConfigError(
                f"window for '{self.quantity}': memory_steps must be >= 1"
            )

    @property
    def horizon(self) -> int:
        """How many steps into the past the window reaches."""
        if self.alignment is WindowAlignment.PAST_ONLY:
            return self.memory_steps
        return self.memory_steps - 1

    @property
    def extractor_id(self) -> str:
        tag = "p" if self.alignment is WindowAlignment.PAST_ONLY else "c"
        return f"{self.quantity}|{tag}{self.memory_steps}"

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "memory_steps": self.memory_steps,
            "alignment": self.alignment.value,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "WindowSpec":
        return WindowSpec(
            quantity=str(d["quantity"]),
            memory_steps=int(d["memory_steps"]),
            alignment=WindowAlignment(d["alignment"]),
        )


@dataclass
class FeatureExtractor:
    """Per-quantity PCA projection fitted on pooled training windows.

    ``projection`` columns are the leading eigenvectors of the
    column-centered window covariance, eigenvalue-ordered, with the
    deterministic sign convention that each column's largest-magnitude
    entry is positive. ``rank_deficient`` flags that fewer components than
    requested survived the degeneracy floor.
    """

    spec: WindowSpec
    mean: np.ndarray
    projection: np.ndarray
    eigenvalues: np.ndarray
    rank_deficient: bool = False

    @property
    def n_components(self) -> int:
        return self.projection.shape[1]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "mean": self.mean.tolist(),
            "projection": self.projection.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "rank_deficient": self.rank_deficient,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "FeatureExtractor":
        return FeatureExtractor(
            spec=WindowSpec.from_dict(d["spec"]),
            mean=np.asarray(d["mean"], dtype=np.float64),
            projection=np.asarray(d["projection"], dtype=np.float64),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=np.float64),
            rank_deficient=bool(d["rank_deficient"]),
        )


@dataclass(frozen=True)
class FeatureColumn:
    """Provenance of one candidate feature column."""

    quantity: str
    component: int
    extractor_id: str
    eigenvalue: float

    @property
    def key(self) -> Tuple[str, int]:
        return (self.quantity, self.component)

    def label(self) -> str:
        return f"{self.quantity}[{self.component}]"

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "component": self.component,
            "extractor_id": self.extractor_id,
            "eigenvalue": self.eigenvalue,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "FeatureColumn":
        return FeatureColumn(
            quantity=str(d["quantity"]),
            component=int(d["component"]),
            extractor_id=str(d["extractor_id"]),
            eigenvalue=float(d["eigenvalue"]),
        )


@dataclass
class FeatureMatrix:
    """Stacked candidate features for all realizations, rows at t >= t0.

    Row order is realization-major: for realization position p the rows
    cover time steps t0 .. n_steps-1 contiguously.
    """

    values: np.ndarray
    columns: List[FeatureColumn]
    realization_ids: List[int]
    t0_steps: int
    n_steps: int

    def __post_init__(self):
        expected = len(self.realization_ids) * self.rows_per_trace
        if self.values.shape != (expected, len(self.columns)):
            raise DataError(
                f"feature matrix shape {self.values.shape} inconsistent with "
                f"{len(self.realization_ids)} realizations x "
                f"{self.rows_per_trace} rows and {len(self.columns)} columns"
            )
        keys = [c.key for c in self.columns]
        if len(set(keys)) != len(keys):
            raise DataError("duplicate feature column provenance")

    @property
    def rows_per_trace(self) -> int:
        return self.n_steps - self.t0_steps

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def trace_slice(self, position: int) -> slice:
        r = self.rows_per_trace
        return slice(position * r, (position + 1) * r)

    def row_lookup(self, realization_id: int, step: int) -> int:
        """Row index for (realization id, time step)."""
        position = self.realization_ids.index(realization_id)
        if not self.t0_steps <= step < self.n_steps:
            raise KeyError(f"step {step} outside usable range [{self.t0_steps}, {self.n_steps})")
        return position * self.rows_per_trace + (step - self.t0_steps)

    def key_index(self) -> Dict[Tuple[str, int], int]:
        return {c.key: i for i, c in enumerate(self.columns)}

    def select(self, indices: Sequence[int]) -> "FeatureMatrix":
        """Column subset preserving provenance and row structure."""
        idx = list(indices)
        return FeatureMatrix(
            values=self.values[:, idx],
            columns=[self.columns[i] for i in idx],
            realization_ids=list(self.realization_ids),
            t0_steps=self.t0_steps,
            n_steps=self.n_steps,
        )


def build_lagged_windows(signal: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Rows of lagged values, most recent first.

    For a signal of length N the result has N - horizon rows; row r
    corresponds to time step t = horizon + r.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("signal must be one-dimensional")
    m = spec.memory_steps
    if x.shape[0] <= spec.horizon:
        raise DataError(
            f"signal of length {x.shape[0]} too short for window "
            f"horizon {spec.horizon}"
        )
    if spec.alignment is WindowAlignment.PAST_ONLY:
        base = x[:-1]
    else:
        base = x
    win = np.lib.stride_tricks.sliding_window_view(base, m)[:, ::-1]
    return np.ascontiguousarray(win)


def _decompose(
    n_rows: int,
    col_sum: np.ndarray,
    gram: np.ndarray,
    spec: WindowSpec,
    n_components: Optional[int],
) -> FeatureExtractor:
    """Shared eigen-decomposition path for fit_pca and assembly."""
    mean = col_sum / n_rows
    cov = gram / n_rows - np.outer(mean, mean)
    cov = (cov + cov.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    requested = spec.memory_steps if n_components is None else n_components
    if requested > spec.memory_steps:
        raise ConfigError(
            f"requested {requested} components from {spec.memory_steps}-wide windows"
        )
    floor = max(eigvals[0], 0.0) * EIGENVALUE_FLOOR
    keep = int(np.sum(eigvals > floor)) if eigvals[0] > 0 else 0
    rank_deficient = keep < requested
    if rank_deficient:
        warnings.warn(
            f"windows for '{spec.quantity}': only {keep} non-degenerate "
            f"components of {requested} requested",
            RuntimeWarning,
            stacklevel=3,
        )
    keep = min(keep, requested)
    eigvals = np.maximum(eigvals[:keep], 0.0)
    eigvecs = eigvecs[:, :keep]
    # Deterministic sign: largest-magnitude entry of each column positive.
    for j in range(keep):
        col = eigvecs[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            eigvecs[:, j] = -col
    return FeatureExtractor(
        spec=spec,
        mean=mean,
        projection=np.ascontiguousarray(eigvecs),
        eigenvalues=eigvals,
        rank_deficient=rank_deficient,
    )


def fit_pca(
    windows: np.ndarray,
    n_components: Optional[int] = None,
    spec: Optional[WindowSpec] = None,
) -> FeatureExtractor:
    """Fit a PCA extractor on a window matrix.

    Degenerate directions (eigenvalue below 1e-7 of the leading one) are
    dropped; if that leaves fewer than the requested components the
    extractor is flagged ``rank_deficient`` and a warning is emitted
    instead of failing.
    """
    W = np.asarray(windows, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 2:
        raise DataError("fit_pca needs a 2-D window matrix with at least 2 rows")
    if spec is None:
        spec = WindowSpec(quantity="window", memory_steps=W.shape[1])
    if W.shape[1] != spec.memory_steps:
        raise DataError(
            f"window width {W.shape[1]} does not match spec memory "
            f"{spec.memory_steps}"
        )
    return _decompose(W.shape[0], W.sum(axis=0), W.T @ W, spec, n_components)


def transform(extractor: FeatureExtractor, windows: np.ndarray) -> np.ndarray:
    """Project windows to feature coordinates: (windows - mean) @ projection."""
    W = np.asarray(windows, dtype=np.float64)
    if W.ndim == 1:
        W = W[None, :]
    if W.shape[1] != extractor.mean.shape[0]:
        raise DataError(
            f"window width {W.shape[1]} does not match extractor width "
            f"{extractor.mean.shape[0]}"
        )
    return (W - extractor.mean) @ extractor.projection


def _window_rows_from_t0(series: np.ndarray, spec: WindowSpec, t0: int) -> np.ndarray:
    """Window rows of one realization restricted to steps t >= t0."""
    win = build_lagged_windows(series, spec)
    offset = t0 - spec.horizon
    if offset < 0:
        raise DataError(
            f"t0 {t0} smaller than window horizon {spec.horizon} "
            f"for '{spec.quantity}'"
        )
    return win[offset:]


def assemble_from_series(
    series: Mapping[str, np.ndarray],
    specs: Sequence[WindowSpec],
    components_per_quantity: Optional[Mapping[str, int]] = None,
    realization_ids: Optional[Sequence[int]] = None,
) -> Tuple[FeatureMatrix, Dict[str, FeatureExtractor]]:
    """Assemble the candidate feature matrix from in-memory series arrays.

    ``series`` maps quantity name -> (n_realizations, n_steps) array. This
    is the workhorse behind :func:`assemble_feature_matrix`; the automatic
    construction calls it directly so predicted series can stand in for
    recorded ones.
    """
    if not specs:
        raise ConfigError("no window specs given")
    quantities = [s.quantity for s in specs]
    if len(set(quantities)) != len(quantities):
        raise ConfigError("duplicate quantity in window specs")
    arrays = {}
    for s in specs:
        if s.quantity not in series:
            raise DataError(f"window spec references unknown quantity '{s.quantity}'")
        a = np.asarray(series[s.quantity], dtype=np.float64)
        if a.ndim != 2:
            raise DataError(f"series for '{s.quantity}' must be 2-D (traces x steps)")
        arrays[s.quantity] = a
    shapes = {a.shape for a in arrays.values()}
    if len(shapes) != 1:
        raise DataError(f"series shapes differ across quantities: {shapes}")
    n_ed, n_steps = shapes.pop()
    t0 = max(s.horizon for s in specs)
    if n_steps <= t0:
        raise DataError(f"n_steps {n_steps} too short for t0 {t0}")
    rows_per_trace = n_steps - t0

    caps = dict(components_per_quantity or {})
    extractors: Dict[str, FeatureExtractor] = {}
    blocks: List[np.ndarray] = []
    columns: List[FeatureColumn] = []
    for spec in specs:
        a = arrays[spec.quantity]
        m = spec.memory_steps
        col_sum = np.zeros(m)
        gram = np.zeros((m, m))
        for r in range(n_ed):
            W = _window_rows_from_t0(a[r], spec, t0)
            col_sum += W.sum(axis=0)
            gram += W.T @ W
        ext = _decompose(
            n_ed * rows_per_trace, col_sum, gram, spec, caps.get(spec.quantity)
        )
        extractors[spec.quantity] = ext
        block = np.empty((n_ed * rows_per_trace, ext.n_components))
        for r in range(n_ed):
            W = _window_rows_from_t0(a[r], spec, t0)
            block[r * rows_per_trace : (r + 1) * rows_per_trace] = transform(ext, W)
        blocks.append(block)
        for c in range(ext.n_components):
            columns.append(
                FeatureColumn(
                    quantity=spec.quantity,
                    component=c,
                    extractor_id=spec.extractor_id,
                    eigenvalue=float(ext.eigenvalues[c]),
                )
            )

    values = np.hstack(blocks) if blocks else np.empty((n_ed * rows_per_trace, 0))
    ids = list(realization_ids) if realization_ids is not None else list(range(n_ed))
    if len(ids) != n_ed:
        raise DataError("realization_ids length does not match series")
    matrix = FeatureMatrix(
        values=values,
        columns=columns,
        realization_ids=ids,
        t0_steps=t0,
        n_steps=n_steps,
    )
    return matrix, extractors


def assemble_feature_matrix(
    dataset: Dataset,
    specs: Sequence[WindowSpec],
    components_per_quantity: Optional[Mapping[str, int]] = None,
) -> Tuple[FeatureMatrix, Dict[str, FeatureExtractor]]:
    """Fit per-quantity extractors on a dataset and stack all features.

    Extractors are fitted on windows pooled across all realizations; rows
    are restricted to t >= t0 (the largest window horizon). Column order is
    spec order, then component index.
    """
    series = {s.quantity: dataset.stack(s.quantity) for s in specs}
    return assemble_from_series(
        series,
        specs,
        components_per_quantity,
        realization_ids=[r.id for r in dataset.realizations],
    )


# ---------------------------------------------------------------------------
# 2-D discrete cosine transform (auxiliary field transform)
# ---------------------------------------------------------------------------


def dct_synthesis_matrix(n: int) -> np.ndarray:
    """Matrix C with C[k, i] = cos(pi*(i+1/2)*k/n).

    A field of n values at positions k is reconstructed from mode
    coefficients eta via ``C @ eta``; the forward transform solves that
    linear system, so synthesis-after-analysis is the identity.
    """
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    return np.cos(np.pi * (i + 0.5) * k / n)


def dct2_modes(
    field: np.ndarray, modes: Sequence[Tuple[int, int]]
) -> np.ndarray:
    """2-D cosine-mode coefficients of a field, for the requested modes.

    The coefficients eta(i, j) are defined by the synthesis sum
    field[k, l] = sum_{i,j} eta[i, j] * cos(pi/nu_y*(i+1/2)*k)
    * cos(pi/nu_z*(j+1/2)*l); this computes the exact inverse.
    """
    F = np.asarray(field, dtype=np.float64)
    if F.ndim != 2:
        raise DataError("field must be a 2-D matrix")
    nu_y, nu_z = F.shape
    for (i, j) in modes:
        if not (0 <= i < nu_y and 0 <= j < nu_z):
            raise ConfigError(f"mode ({i}, {j}) out of range for {nu_y}x{nu_z} field")
    Cy = dct_synthesis_matrix(nu_y)
    Cz = dct_synthesis_matrix(nu_z)
    H = np.linalg.solve(Cy, F)
    H = np.linalg.solve(Cz, H.T).T
    return np.array([H[i, j] for (i, j) in modes])
