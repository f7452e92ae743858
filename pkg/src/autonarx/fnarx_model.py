"""Single NARX surrogate on window-PCA features, fit by modified LARS.

The fit runs a least-angle regression path over the monomial basis of the
candidate feature columns, but model selection along the path is driven by
closed-loop forecast error, not one-step residuals: at geometrically spaced
active-set sizes the active set is refit by unpenalized least squares and
the refit model is run as a closed-loop forecaster over training traces;
the checkpoint with the smallest mean normalized forecast error wins.

Implementation notes
--------------------
1. The LARS path itself is computed from the Gram matrix of the
   standardized monomial regressors (centered, unit norm, intercept
   excluded), so the full regression matrix is never materialized beyond
   row chunks.
2. Closed-loop forecasting is batched across traces: feature streams of
   non-autoregressive quantities are precomputed with vectorized window
   projections, and only the autoregressive window of the model's own past
   outputs is evaluated inside the time loop.
3. All floats are 64-bit; fits and forecasts are deterministic given their
   inputs.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.linear_model import lars_path_gram

from .errors import ConfigError, DataError, ForecastDivergence
from .poly_basis import MultiIndexSet, evaluate_basis, evaluate_basis_matrix, generate_hyperbolic_set
from .signals import Dataset
from .window_features import (
    FeatureColumn,
    FeatureExtractor,
    FeatureMatrix,
    WindowAlignment,
)

MODEL_SCHEMA_VERSION = 1

# Row-chunk size for Gram accumulation over the monomial matrix.
_CHUNK = 65536

# Regressors whose correlation with an already-kept regressor exceeds this
# are dropped before the path computation.
_COLLINEAR_TOL = 1e-10


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of one model fit.

    ``memory_steps`` is consumed by the automatic construction (uniform
    window length for every quantity in the model whose target this config
    belongs to); plain :func:`fit` works on an already-assembled feature
    matrix and ignores it.
    """

    degree: int = 2
    q_norm: float = 1.0
    max_lars_steps: Optional[int] = None
    forecast_eval_points: int = 10
    forecast_eval_traces: int = 50
    memory_steps: Optional[int] = None

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigError(f"degree must be >= 1, got {self.degree}")
        if not 0 < self.q_norm <= 1:
            raise ConfigError(f"q_norm must be in (0, 1], got {self.q_norm}")
        if self.forecast_eval_points < 1:
            raise ConfigError("forecast_eval_points must be >= 1")
        if self.forecast_eval_traces < 1:
            raise ConfigError("forecast_eval_traces must be >= 1")


@dataclass
class ErrorMetrics:
    """Per-trace normalized forecast errors and their mean.

    ``mean`` averages the finite entries of ``per_trace``; non-finite
    entries (zero-variance mismatches, diverged forecasts) are excluded and
    counted in ``n_excluded``.
    """

    per_trace: np.ndarray
    mean: float
    rmse_per_trace: np.ndarray
    n_excluded: int = 0


@dataclass
class ForecastData:
    """Per-trace series needed to score closed-loop forecasts during fit.

    ``inputs`` maps each non-target quantity a model may reference to a
    (n_traces, n_steps) array of the series the forecaster should read —
    recorded values, or predicted ones when an upstream model's output
    stands in for the truth. ``truth`` is the (n_traces, n_steps) recorded
    target used for seeding and scoring. ``include`` lists the trace
    positions eligible for scoring (zero-variance targets are left out).
    """

    inputs: Dict[str, np.ndarray]
    truth: np.ndarray
    dt: float
    include: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.include is None:
            var = self.truth.var(axis=1)
            keep = np.flatnonzero(var > 0)
            if keep.size < self.truth.shape[0]:
                warnings.warn(
                    f"{self.truth.shape[0] - keep.size} zero-variance target "
                    "traces excluded from forecast scoring",
                    RuntimeWarning,
                )
            self.include = keep

    @staticmethod
    def from_dataset(dataset: Dataset, target: str) -> "ForecastData":
        inputs = {
            name: dataset.stack(name) for name in dataset.channel_names if name != target
        }
        return ForecastData(
            inputs=inputs, truth=dataset.stack(target), dt=dataset.dt
        )


@dataclass
class FnarxModel:
    """A trained F-NARX model: feature columns, basis, coefficients.

    ``standardization`` holds the training mean/scale applied to feature
    columns before monomial evaluation. ``t0_steps`` is the largest window
    horizon among the referenced extractors: forecasts before that step
    are seeded, not predicted.
    """

    target: str
    input_columns: List[FeatureColumn]
    extractors: Dict[str, FeatureExtractor]
    standardization: Tuple[np.ndarray, np.ndarray]
    basis: MultiIndexSet
    coefficients: np.ndarray
    t0_steps: int
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.coefficients.shape[0] != self.basis.n_terms:
            raise ConfigError("coefficient length does not match basis size")
        for col in self.input_columns:
            if col.quantity not in self.extractors:
                raise ConfigError(f"missing extractor for column {col.label()}")

    @property
    def referenced_quantities(self) -> List[str]:
        seen: List[str] = []
        for col in self.input_columns:
            if col.quantity not in seen:
                seen.append(col.quantity)
        return seen

    @property
    def is_autoregressive(self) -> bool:
        return any(col.quantity == self.target for col in self.input_columns)

    def active_terms(self) -> List[Tuple[int, List[Tuple[int, int]]]]:
        """Nonzero-coefficient terms as (basis index, [(feature, exponent)])."""
        out = []
        for t in np.flatnonzero(self.coefficients != 0.0):
            alpha = self.basis.indices[t]
            out.append((int(t), [(int(j), int(e)) for j, e in enumerate(alpha) if e > 0]))
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "target": self.target,
            "input_columns": [c.to_dict() for c in self.input_columns],
            "extractors": {k: v.to_dict() for k, v in self.extractors.items()},
            "standardization": {
                "mean": self.standardization[0].tolist(),
                "scale": self.standardization[1].tolist(),
            },
            "basis": self.basis.to_dict(),
            "coefficients": self.coefficients.tolist(),
            "t0_steps": self.t0_steps,
            "diagnostics": self.diagnostics,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "FnarxModel":
        std = d["standardization"]
        return FnarxModel(
            target=str(d["target"]),
            input_columns=[FeatureColumn.from_dict(c) for c in d["input_columns"]],
            extractors={
                k: FeatureExtractor.from_dict(v) for k, v in d["extractors"].items()
            },
            standardization=(
                np.asarray(std["mean"], dtype=np.float64),
                np.asarray(std["scale"], dtype=np.float64),
            ),
            basis=MultiIndexSet.from_dict(d["basis"]),
            coefficients=np.asarray(d["coefficients"], dtype=np.float64),
            t0_steps=int(d["t0_steps"]),
            diagnostics=dict(d.get("diagnostics", {})),
        )


def save_model(model: FnarxModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path: str) -> FnarxModel:
    with open(path) as fh:
        return FnarxModel.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------


def trace_error(truth: np.ndarray, prediction: np.ndarray) -> float:
    """Mean squared error normalized by the trace variance (denominator N).

    A zero-variance truth yields 0 on exact match and +inf otherwise; the
    +inf flag is excluded from mean errors downstream.
    """
    y = np.asarray(truth, dtype=np.float64)
    p = np.asarray(prediction, dtype=np.float64)
    if y.shape != p.shape:
        raise DataError(f"length mismatch: truth {y.shape} vs prediction {p.shape}")
    var = float(np.var(y))
    if var == 0.0:
        return 0.0 if np.array_equal(y, p) else float("inf")
    if not np.all(np.isfinite(p)):
        return float("inf")
    return float(np.mean((y - p) ** 2) / var)


def mean_error(per_trace: Sequence[float]) -> float:
    """Arithmetic mean of per-trace errors, excluding non-finite flags."""
    arr = np.asarray(per_trace, dtype=np.float64)
    if arr.size == 0:
        raise DataError("mean_error of empty vector")
    finite = arr[np.isfinite(arr)]
    if finite.size < arr.size:
        warnings.warn(
            f"{arr.size - finite.size} non-finite trace errors excluded from mean",
            RuntimeWarning,
        )
    if finite.size == 0:
        return float("inf")
    return float(np.mean(finite))


def rmse(truth: np.ndarray, prediction: np.ndarray) -> float:
    """Root-mean-squared difference between two equal-length sequences."""
    y = np.asarray(truth, dtype=np.float64)
    p = np.asarray(prediction, dtype=np.float64)
    if y.shape != p.shape:
        raise DataError(f"length mismatch: truth {y.shape} vs prediction {p.shape}")
    return float(np.sqrt(np.mean((y - p) ** 2)))


def compute_metrics(truths: np.ndarray, predictions: np.ndarray) -> ErrorMetrics:
    """ErrorMetrics over stacked (n_traces, n_steps) truth/prediction pairs."""
    eps = np.array([trace_error(t, p) for t, p in zip(truths, predictions)])
    rmses = np.array(
        [
            rmse(t, p) if np.all(np.isfinite(p)) else float("inf")
            for t, p in zip(truths, predictions)
        ]
    )
    n_bad = int(np.sum(~np.isfinite(eps)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = mean_error(eps)
    return ErrorMetrics(per_trace=eps, mean=mean, rmse_per_trace=rmses, n_excluded=n_bad)


# ---------------------------------------------------------------------------
# One-step prediction and closed-loop forecasting
# ---------------------------------------------------------------------------


def predict_one_step(model: FnarxModel, feature_row: np.ndarray) -> float:
    """Model response for one raw feature row (standardization applied here)."""
    x = np.asarray(feature_row, dtype=np.float64)
    if x.shape != (len(model.input_columns),):
        raise DataError(
            f"feature row of shape {x.shape} does not match "
            f"{len(model.input_columns)} input columns"
        )
    mu, sd = model.standardization
    z = (x - mu) / sd
    return float(model.coefficients @ evaluate_basis(z, model.basis))


class _ForecastEngine:
    """Precompiled closed-loop forecaster for one model over a trace batch."""

    def __init__(self, model: FnarxModel):
        self.model = model
        self.k = len(model.input_columns)
        self.mu, self.sd = model.standardization
        # Split columns into autoregressive (windows over the model's own
        # output) and exogenous-style streams that can be precomputed.
        self.ar_positions: List[int] = []
        self.ar_components: List[int] = []
        self.stream_groups: Dict[str, Tuple[List[int], List[int]]] = {}
        for pos, col in enumerate(model.input_columns):
            ext = model.extractors[col.quantity]
            if ext.spec.alignment is WindowAlignment.PAST_ONLY:
                if col.quantity != model.target:
                    raise ConfigError(
                        f"PastOnly column {col.label()} on non-target quantity"
                    )
                self.ar_positions.append(pos)
                self.ar_components.append(col.component)
            else:
                positions, comps = self.stream_groups.setdefault(col.quantity, ([], []))
                positions.append(pos)
                comps.append(col.component)
        if self.ar_positions:
            ext = model.extractors[model.target]
            self.ar_memory = ext.spec.memory_steps
            self.ar_mean = ext.mean
            self.ar_proj = np.ascontiguousarray(ext.projection[:, self.ar_components])
        self.terms = model.active_terms()
        self.coef = model.coefficients

    def _streams(self, inputs: Mapping[str, np.ndarray], n_steps: int, batch: int) -> np.ndarray:
        """(batch, n_steps, k) array with all non-autoregressive features."""
        S = np.zeros((batch, n_steps, self.k))
        for quantity, (positions, comps) in self.stream_groups.items():
            if quantity not in inputs:
                raise DataError(f"forecast inputs missing quantity '{quantity}'")
            series = np.asarray(inputs[quantity], dtype=np.float64)
            ext = self.model.extractors[quantity]
            m = ext.spec.memory_steps
            win = np.lib.stride_tricks.sliding_window_view(series, m, axis=1)[..., ::-1]
            proj = ext.projection[:, comps]
            feats = np.tensordot(win - ext.mean, proj, axes=([2], [0]))
            S[:, m - 1 :, positions] = feats
        return S

    def run(
        self,
        inputs: Mapping[str, np.ndarray],
        n_steps: int,
        seeds: Optional[np.ndarray],
        batch: int,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Forecast the batch; returns (predictions, first_bad_step per trace).

        ``first_bad_step`` is -1 for traces that stayed finite. Diverged
        traces hold their last finite values frozen at zero from the first
        bad step on so the rest of the batch is unaffected.
        """
        t0 = self.model.t0_steps
        out = np.zeros((batch, n_steps))
        if seeds is not None and t0 > 0:
            seeds = np.asarray(seeds, dtype=np.float64)
            if seeds.shape != (batch, t0):
                raise DataError(
                    f"seed block of shape {seeds.shape} does not match "
                    f"(batch {batch}, t0 {t0})"
                )
            out[:, :t0] = seeds
        streams = self._streams(inputs, n_steps, batch)
        bad_step = np.full(batch, -1, dtype=np.int64)
        alive = np.ones(batch, dtype=bool)
        mu, sd = self.mu, self.sd
        work = np.empty((batch, self.k))
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            for t in range(t0, n_steps):
                work[:] = streams[:, t, :]
                if self.ar_positions:
                    win = out[:, t - self.ar_memory : t][:, ::-1]
                    work[:, self.ar_positions] = (win - self.ar_mean) @ self.ar_proj
                z = (work - mu) / sd
                y_t = np.zeros(batch)
                for term_idx, factors in self.terms:
                    prod = np.full(batch, self.coef[term_idx])
                    for j, e in factors:
                        prod = prod * z[:, j] ** e
                    y_t += prod
                newly_bad = alive & ~np.isfinite(y_t)
                if np.any(newly_bad):
                    bad_step[newly_bad] = t
                    alive &= ~newly_bad
                out[:, t] = np.where(alive, y_t, 0.0)
        return out, bad_step


def forecast_batch(
    model: FnarxModel,
    inputs: Mapping[str, np.ndarray],
    seeds: Optional[np.ndarray] = None,
    n_steps: Optional[int] = None,
    batch: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-loop forecasts for a trace batch.

    ``inputs`` maps every non-target quantity the model references to a
    (n_traces, n_steps) array; ``seeds`` optionally provides the first
    t0 true target values per trace (zeros otherwise). When the model
    references no non-target quantity, ``n_steps`` and ``batch`` must be
    given explicitly. Returns the (n_traces, n_steps) prediction array and
    the per-trace first non-finite step (-1 when the forecast stayed
    finite).
    """
    shapes = {np.asarray(v).shape for v in inputs.values()}
    if shapes:
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise DataError(f"forecast inputs must share one 2-D shape, got {shapes}")
        batch, n_steps = shapes.pop()
    elif n_steps is None or batch is None:
        raise DataError(
            "forecast without exogenous inputs needs explicit n_steps and batch"
        )
    engine = _ForecastEngine(model)
    return engine.run(inputs, n_steps, seeds, batch)


def forecast(
    model: FnarxModel,
    inputs: Mapping[str, np.ndarray],
    seed_values: Optional[np.ndarray] = None,
    n_steps: Optional[int] = None,
) -> np.ndarray:
    """Closed-loop forecast of a single trace.

    ``inputs`` maps the model's non-target quantities to aligned 1-D
    sequences; ``seed_values`` gives the first t0 true target values.
    ``n_steps`` is only needed when ``inputs`` is empty (purely
    autoregressive model). Raises :class:`ForecastDivergence` (with the
    step index) if a prediction goes non-finite.
    """
    batch_inputs = {}
    for name, v in inputs.items():
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 1:
            raise DataError(f"input '{name}' must be one-dimensional")
        batch_inputs[name] = arr[None, :]
    seeds = None
    if seed_values is not None:
        seed_values = np.asarray(seed_values, dtype=np.float64)
        if seed_values.shape != (model.t0_steps,):
            raise DataError(
                f"seed of shape {seed_values.shape} does not match t0 "
                f"{model.t0_steps}"
            )
        seeds = seed_values[None, :]
    out, bad = forecast_batch(model, batch_inputs, seeds, n_steps=n_steps, batch=1)
    if bad[0] >= 0:
        raise ForecastDivergence(int(bad[0]), model.target)
    return out[0]


# ---------------------------------------------------------------------------
# Modified-LARS fit
# ---------------------------------------------------------------------------


def _gram_accumulate(
    Z: np.ndarray, y: np.ndarray, basis: MultiIndexSet
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """G = P'P, b = P'y, column sums of P, over row chunks."""
    n_terms = basis.n_terms
    G = np.zeros((n_terms, n_terms))
    b = np.zeros(n_terms)
    col_sum = np.zeros(n_terms)
    for start in range(0, Z.shape[0], _CHUNK):
        P = evaluate_basis_matrix(Z[start : start + _CHUNK], basis)
        G += P.T @ P
        b += P.T @ y[start : start + _CHUNK]
        col_sum += P.sum(axis=0)
    return G, b, col_sum, Z.shape[0]


def _refit_active(
    G: np.ndarray, b: np.ndarray, terms: Sequence[int]
) -> np.ndarray:
    """Unpenalized least-squares coefficients for the active terms."""
    idx = np.asarray(terms, dtype=np.int64)
    Gs = G[np.ix_(idx, idx)]
    bs = b[idx]
    try:
        coef = np.linalg.solve(Gs, bs)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError("non-finite solve")
    except np.linalg.LinAlgError:
        coef, *_ = np.linalg.lstsq(Gs, bs, rcond=None)
    return coef


def _checkpoint_sizes(path_len: int, n_points: int) -> List[int]:
    """Geometrically spaced active-set sizes along the path, plus the end."""
    if path_len <= 0:
        return []
    raw = np.geomspace(1, path_len, num=min(n_points, path_len))
    sizes = sorted(set(int(round(s)) for s in raw) | {path_len})
    return [s for s in sizes if 1 <= s <= path_len]


def _make_model(
    target: str,
    features: FeatureMatrix,
    extractors: Mapping[str, FeatureExtractor],
    standardization: Tuple[np.ndarray, np.ndarray],
    basis: MultiIndexSet,
    coefficients: np.ndarray,
    fallback_t0: int,
    diagnostics: Optional[dict] = None,
) -> FnarxModel:
    referenced = {c.quantity for c in features.columns}
    horizons = [extractors[q].spec.horizon for q in referenced]
    t0 = max(horizons) if horizons else fallback_t0
    return FnarxModel(
        target=target,
        input_columns=list(features.columns),
        extractors={q: extractors[q] for q in referenced},
        standardization=standardization,
        basis=basis,
        coefficients=coefficients,
        t0_steps=t0,
        diagnostics=diagnostics or {},
    )


def intercept_model(
    target: str, value: float, t0_steps: int = 0
) -> FnarxModel:
    """Constant model predicting ``value`` at every step from t0 on."""
    basis = MultiIndexSet(
        indices=np.zeros((1, 0), dtype=np.int64), degree=0, q_norm=1.0
    )
    return FnarxModel(
        target=target,
        input_columns=[],
        extractors={},
        standardization=(np.zeros(0), np.ones(0)),
        basis=basis,
        coefficients=np.array([float(value)]),
        t0_steps=t0_steps,
        diagnostics={"intercept_only": True},
    )


def _score_candidate(
    model: FnarxModel,
    traces: ForecastData,
    positions: np.ndarray,
) -> float:
    """Mean normalized closed-loop forecast error over the given traces."""
    inputs = {}
    for q in model.referenced_quantities:
        if q == model.target:
            continue
        if q not in traces.inputs:
            raise DataError(f"scoring traces missing quantity '{q}'")
        inputs[q] = traces.inputs[q][positions]
    truth = traces.truth[positions]
    t0 = model.t0_steps
    seeds = truth[:, :t0] if t0 > 0 else None
    preds, bad = forecast_batch(
        model, inputs, seeds, n_steps=truth.shape[1], batch=truth.shape[0]
    )
    if np.any(bad >= 0):
        return float("inf")
    eps = np.array([trace_error(t, p) for t, p in zip(truth, preds)])
    if not np.all(np.isfinite(eps)):
        return float("inf")
    return float(np.mean(eps))


def fit(
    features: FeatureMatrix,
    extractors: Mapping[str, FeatureExtractor],
    targets: np.ndarray,
    traces: Union[Dataset, ForecastData],
    config: FitConfig,
    target: str = "y",
) -> FnarxModel:
    """Fit one F-NARX model on the given candidate feature columns.

    Parameters
    ----------
    features : FeatureMatrix
        Candidate columns (already restricted to the working set), rows
        stacked across training traces at t >= t0.
    extractors : mapping
        Per-quantity extractors backing the feature columns.
    targets : ndarray
        Stacked target values aligned with the feature rows.
    traces : Dataset or ForecastData
        Per-trace series for closed-loop scoring of path checkpoints.
    config : FitConfig
        Basis and path-selection hyperparameters.
    target : str
        Target channel name recorded in the model.

    Returns the checkpoint model with the smallest mean forecast error;
    deterministic given inputs.
    """
    if isinstance(traces, Dataset):
        traces = ForecastData.from_dataset(traces, target)
    y = np.asarray(targets, dtype=np.float64)
    X = features.values
    if X.shape[0] != y.shape[0]:
        raise DataError(
            f"feature rows {X.shape[0]} do not match target count {y.shape[0]}"
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("non-finite values in fit inputs")
    for col in features.columns:
        ext = extractors.get(col.quantity)
        if ext is None:
            raise ConfigError(f"missing extractor for column {col.label()}")
        past_only = ext.spec.alignment is WindowAlignment.PAST_ONLY
        if past_only != (col.quantity == target):
            raise ConfigError(
                f"column {col.label()}: alignment "
                f"{'PastOnly' if past_only else 'IncludeCurrent'} is invalid "
                f"for target '{target}'"
            )

    # All-constant target: intercept-only model by convention.
    if np.var(y) == 0.0:
        value = float(y[0]) if y.size else 0.0
        k = len(features.columns)
        basis = generate_hyperbolic_set(k, config.degree, config.q_norm) if k else None
        if basis is None:
            return intercept_model(target, value, features.t0_steps)
        coef = np.zeros(basis.n_terms)
        coef[0] = value
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd == 0.0, 1.0, sd)
        return _make_model(
            target, features, extractors, (mu, sd), basis, coef,
            features.t0_steps, {"intercept_only": True},
        )

    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)
    Z = (X - mu) / sd
    basis = generate_hyperbolic_set(
        len(features.columns), config.degree, config.q_norm
    )
    G, b, col_sum, n = _gram_accumulate(Z, y, basis)

    # Standardize the non-intercept regressors (center, unit norm) from the
    # raw Gram pieces; the intercept (zero multi-index, position 0) is
    # handled by the refits.
    m = col_sum / n
    y_mean = float(y.mean())
    Gc = G - n * np.outer(m, m)
    bc = b - n * m * y_mean
    norms2 = np.diag(Gc).copy()
    scale = np.sqrt(np.maximum(norms2, 0.0))
    tol = float(np.max(norms2)) * 1e-14 if norms2.size else 0.0
    usable = np.flatnonzero((norms2 > tol) & (np.arange(basis.n_terms) != 0))

    # Drop near-duplicate regressors (|corr| > 1 - 1e-10 with a kept one).
    kept: List[int] = []
    for i in usable:
        duplicate = False
        for j in kept:
            c = Gc[i, j] / (scale[i] * scale[j])
            if abs(c) > 1.0 - _COLLINEAR_TOL:
                duplicate = True
                break
        if not duplicate:
            kept.append(int(i))
    kept_arr = np.asarray(kept, dtype=np.int64)

    diagnostics: Dict[str, object] = {
        "n_rows": int(n),
        "n_terms": int(basis.n_terms),
        "n_regressors": int(kept_arr.size),
    }

    if kept_arr.size:
        D = 1.0 / scale[kept_arr]
        G_std = Gc[np.ix_(kept_arr, kept_arr)] * np.outer(D, D)
        b_std = bc[kept_arr] * D
        max_steps = config.max_lars_steps or int(kept_arr.size)
        # lars_path_gram stops the path once max-covariance / n_samples
        # drops below float32 eps; at six-figure row counts that fires while
        # substantial correlation remains. Feeding correlation-scale inputs
        # (unit-norm regressors, Xy normalized by ||y - mean||) with
        # n_samples=1 makes the stop criterion scale-free without changing
        # the order of the path.
        y_norm = float(np.sqrt(n * y.var()))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            alphas, active, coefs = lars_path_gram(
                Xy=b_std / y_norm,
                Gram=G_std,
                n_samples=1,
                method="lar",
                max_iter=max_steps,
            )
        order = [int(kept_arr[a]) for a in active]
        diagnostics["lars_l1_path"] = [
            float(v) for v in np.abs(coefs).sum(axis=0)
        ]
    else:
        order = []

    scoring = traces.include[: config.forecast_eval_traces]
    sizes = _checkpoint_sizes(len(order), config.forecast_eval_points)

    candidates: List[Tuple[float, int, np.ndarray]] = []
    # Intercept-only is always a valid fallback checkpoint.
    coef0 = np.zeros(basis.n_terms)
    coef0[0] = _refit_active(G, b, [0])[0]
    model0 = _make_model(
        target, features, extractors, (mu, sd), basis, coef0, features.t0_steps
    )
    candidates.append((_score_candidate(model0, traces, scoring), 0, coef0))
    for s in sizes:
        terms = [0] + order[:s]
        coef = np.zeros(basis.n_terms)
        coef[terms] = _refit_active(G, b, terms)
        model_s = _make_model(
            target, features, extractors, (mu, sd), basis, coef, features.t0_steps
        )
        candidates.append((_score_candidate(model_s, traces, scoring), s, coef))

    errors = np.array([c[0] for c in candidates])
    best = int(np.argmin(errors))
    diagnostics["checkpoint_sizes"] = [int(c[1]) for c in candidates]
    diagnostics["checkpoint_errors"] = [float(c[0]) for c in candidates]
    diagnostics["chosen_size"] = int(candidates[best][1])
    diagnostics["n_eval_traces"] = int(len(scoring))

    return _make_model(
        target,
        features,
        extractors,
        (mu, sd),
        basis,
        candidates[best][2],
        features.t0_steps,
        diagnostics,
    )
