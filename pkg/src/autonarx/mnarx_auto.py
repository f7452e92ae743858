"""Automatic construction of NARX model chains from multi-channel data.

Given recordings of a target response, exogenous drivers, and whatever
intermediate quantities the data source exposes, the construction loop
builds the target model one feature at a time: candidate window-PCA
features are ranked by rank correlation with the current forecast
residual, the best candidate is test-fit, and it is kept only if the mean
closed-loop forecast error over the training traces improves. When the
best candidate belongs to an intermediate quantity that has no model yet,
the construction recurses and builds that quantity's model first, so the
final artifact is a causally ordered chain of transforms and models that
runs on exogenous inputs alone.

Bookkeeping invariants
----------------------
* Candidate features live in exactly one of three pools: available,
  accepted, or set aside after a failed trial. Set-aside features return
  to the pool whenever an acceptance changes the residual.
* A feature of an unmodeled intermediate quantity is never accepted
  directly; it always triggers recursion on that quantity first.
* Accepted features only ever reference channels that are exogenous,
  already modeled, or transforms of those, which is what makes the final
  stage order causal.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.stats import kendalltau as _scipy_kendalltau
from scipy.stats import pearsonr as _scipy_pearsonr
from scipy.stats import spearmanr as _scipy_spearmanr

from .errors import ConfigError, DataError
from .fnarx_model import (
    FitConfig,
    FnarxModel,
    ForecastData,
    fit as fit_model,
    forecast_batch,
    intercept_model,
    trace_error,
)
from .signals import Dataset, QuantityRole, TransformSpec, format_float
from .window_features import (
    FeatureColumn,
    FeatureMatrix,
    WindowAlignment,
    WindowSpec,
    assemble_from_series,
    dct_synthesis_matrix,
)

SEQUENCE_SCHEMA_VERSION = 1


class Assessment(str, Enum):
    """Outcome of one construction-loop pass, recorded in the trace."""

    ACCEPTED = "accepted"
    REJECTED = "rejected"
    RECURSED = "recursed"
    STOPPED = "stopped"


@dataclass(frozen=True)
class RankingConfig:
    """Parameters of the ranking loop and its termination rules."""

    rho_threshold: float = 0.2       # stop when max |rho| falls below this
    error_threshold: float = 0.0     # stop when the mean error reaches this
    max_iterations: Optional[int] = None
    max_runtime: Optional[float] = None  # seconds, wall clock, whole call
    method: str = "kendall"          # kendall | spearman | pearson
    subsample: int = 100_000         # row cap for correlation estimates
    components_per_quantity: Optional[Union[int, Mapping[str, int]]] = None

    def __post_init__(self):
        if not 0.0 <= self.rho_threshold <= 1.0:
            raise ConfigError(
                f"rho_threshold must lie in [0, 1], got {self.rho_threshold}"
            )
        if self.error_threshold < 0.0:
            raise ConfigError("error_threshold must be >= 0")
        if self.method not in ("kendall", "spearman", "pearson"):
            raise ConfigError(f"unknown ranking method '{self.method}'")
        if self.subsample < 2:
            raise ConfigError("subsample must be >= 2")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.max_runtime is not None and self.max_runtime <= 0:
            raise ConfigError("max_runtime must be > 0")


# ---------------------------------------------------------------------------
# Rank correlation
# ---------------------------------------------------------------------------


def kendall_tau(x: np.ndarray, y: np.ndarray) -> float:
    """Kendall tau-b between two equal-length vectors; 0.0 for constant input."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"tau needs equal-length vectors, got {x.shape}, {y.shape}")
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    result = _scipy_kendalltau(x, y)
    stat = float(result.statistic)
    return stat if np.isfinite(stat) else 0.0


def _correlation(x: np.ndarray, y: np.ndarray, method: str) -> float:
    if method == "kendall":
        return kendall_tau(x, y)
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    if method == "spearman":
        stat = float(_scipy_spearmanr(x, y).statistic)
    else:
        stat = float(_scipy_pearsonr(x, y).statistic)
    return stat if np.isfinite(stat) else 0.0


def subsample_indices(n_rows: int, cap: int) -> np.ndarray:
    """Evenly spaced row indices, at most ``cap`` of them."""
    if n_rows <= cap:
        return np.arange(n_rows)
    return np.unique(np.round(np.linspace(0, n_rows - 1, num=cap)).astype(np.int64))


def rank_features(
    values: np.ndarray,
    columns: Sequence[FeatureColumn],
    residual: np.ndarray,
    config: RankingConfig,
) -> Tuple[List[int], np.ndarray]:
    """Rank candidate columns by |correlation| with the residual.

    Returns (order, abs_rho): ``order`` lists column positions from most to
    least correlated; ties break toward the column with the larger source
    eigenvalue, then the smaller position.
    """
    values = np.asarray(values, dtype=np.float64)
    residual = np.asarray(residual, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != len(columns):
        raise DataError(
            f"value matrix of shape {values.shape} does not match "
            f"{len(columns)} columns"
        )
    if residual.shape != (values.shape[0],):
        raise DataError("residual length does not match value rows")
    idx = subsample_indices(values.shape[0], config.subsample)
    res = residual[idx]
    abs_rho = np.empty(len(columns))
    for j in range(len(columns)):
        abs_rho[j] = abs(_correlation(values[idx, j], res, config.method))
    order = sorted(
        range(len(columns)),
        key=lambda j: (-abs_rho[j], -columns[j].eigenvalue, j),
    )
    return order, abs_rho


# ---------------------------------------------------------------------------
# Registered channel transforms
# ---------------------------------------------------------------------------

# Each transform maps a list of (n_traces, n_steps) source arrays to one
# (n_traces, n_steps) output array. Registered by kind name.
TransformFn = Callable[[List[np.ndarray], float, Mapping], np.ndarray]

TRANSFORMS: Dict[str, TransformFn] = {}


def register_transform(kind: str, fn: TransformFn) -> None:
    if kind in TRANSFORMS:
        raise ConfigError(f"transform kind '{kind}' already registered")
    TRANSFORMS[kind] = fn


def _t_identity(sources, dt, params):
    if len(sources) != 1:
        raise ConfigError("identity transform takes exactly one source")
    return np.array(sources[0], dtype=np.float64)


def _t_integral(sources, dt, params):
    if len(sources) != 1:
        raise ConfigError("integral transform takes exactly one source")
    return cumulative_trapezoid(sources[0], dx=dt, axis=-1, initial=0.0)


def _t_moving_average(sources, dt, params):
    if len(sources) != 1:
        raise ConfigError("moving_average transform takes exactly one source")
    width = int(params.get("width", 0))
    if width < 1:
        raise ConfigError("moving_average needs integer width >= 1")
    x = np.asarray(sources[0], dtype=np.float64)
    csum = np.cumsum(x, axis=-1)
    out = np.empty_like(x)
    n = x.shape[-1]
    w = min(width, n)
    # Startup: mean over the samples available so far.
    counts = np.arange(1, w + 1, dtype=np.float64)
    out[..., :w] = csum[..., :w] / counts
    if n > w:
        out[..., w:] = (csum[..., w:] - csum[..., :-w]) / w
    return out


def _t_dct_mode(sources, dt, params):
    """One DCT modal coordinate of a multi-channel profile, per time step.

    The k-th output sample is the k-th coefficient of the DCT expansion of
    the vector (source_0(t), ..., source_{m-1}(t)); the analysis weights
    are the k-th row of the inverse of the synthesis matrix.
    """
    if "mode" not in params:
        raise ConfigError("dct_mode transform needs a 'mode' parameter")
    k = int(params["mode"])
    m = len(sources)
    if m < 1:
        raise ConfigError("dct_mode transform needs at least one source")
    if not 0 <= k < m:
        raise ConfigError(f"dct mode {k} out of range for {m} sources")
    C = dct_synthesis_matrix(m)
    weights = np.linalg.solve(C, np.eye(m))[k]
    stacked = np.stack([np.asarray(s, dtype=np.float64) for s in sources], axis=0)
    return np.tensordot(weights, stacked, axes=([0], [0]))


def _t_harmonic(sources, dt, params):
    """sin(k*theta) or cos(k*theta) of an angle channel, wrapped mod 2*pi."""
    if len(sources) != 1:
        raise ConfigError("harmonic transform takes exactly one source")
    k = int(params.get("k", 1))
    func = params.get("func", "sin")
    if k < 1:
        raise ConfigError("harmonic order k must be >= 1")
    if func not in ("sin", "cos"):
        raise ConfigError(f"harmonic func must be sin or cos, got '{func}'")
    theta = np.mod(np.asarray(sources[0], dtype=np.float64), 2.0 * np.pi)
    return np.sin(k * theta) if func == "sin" else np.cos(k * theta)


register_transform("identity", _t_identity)
register_transform("integral", _t_integral)
register_transform("moving_average", _t_moving_average)
register_transform("dct_mode", _t_dct_mode)
register_transform("harmonic", _t_harmonic)


def apply_transform(
    spec: TransformSpec, series: Mapping[str, np.ndarray], dt: float
) -> np.ndarray:
    """Evaluate one registered transform on (n_traces, n_steps) source arrays."""
    if spec.kind not in TRANSFORMS:
        raise ConfigError(f"unknown transform kind '{spec.kind}'")
    missing = [s for s in spec.sources if s not in series]
    if missing:
        raise DataError(f"transform '{spec.output}' missing sources {missing}")
    sources = [np.asarray(series[s], dtype=np.float64) for s in spec.sources]
    out = TRANSFORMS[spec.kind](sources, dt, spec.params)
    if out.shape != sources[0].shape:
        raise DataError(
            f"transform '{spec.output}' changed shape "
            f"{sources[0].shape} -> {out.shape}"
        )
    return out


# ---------------------------------------------------------------------------
# Model sequence (the composed artifact)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransformStage:
    spec: TransformSpec


@dataclass(frozen=True)
class ModelStage:
    model: FnarxModel


Stage = Union[TransformStage, ModelStage]


@dataclass
class SequencePrediction:
    """Outputs of a sequence run: predicted channels and failure records."""

    channels: Dict[str, np.ndarray]
    fail_steps: Dict[str, np.ndarray]

    def failed_traces(self) -> np.ndarray:
        """Positions of traces where any stage went non-finite."""
        if not self.fail_steps:
            return np.zeros(0, dtype=np.int64)
        bad = np.zeros(next(iter(self.fail_steps.values())).shape[0], dtype=bool)
        for steps in self.fail_steps.values():
            bad |= steps >= 0
        return np.flatnonzero(bad)


@dataclass
class ModelSequence:
    """Causally ordered chain of transforms and models ending at the target.

    ``exogenous`` lists the channels a prediction run must supply; each
    stage only reads channels produced by earlier stages, the exogenous
    inputs, or (autoregressively) its own output.
    """

    target: str
    exogenous: List[str]
    stages: List[Stage]

    def __post_init__(self):
        produced: Set[str] = set(self.exogenous)
        outputs: List[str] = []
        for stage in self.stages:
            if isinstance(stage, TransformStage):
                needed = list(stage.spec.sources)
                out = stage.spec.output
            else:
                out = stage.model.target
                needed = [q for q in stage.model.referenced_quantities if q != out]
            for name in needed:
                if name not in produced:
                    raise ConfigError(
                        f"stage producing '{out}' reads '{name}' before it exists"
                    )
            if out in produced:
                raise ConfigError(f"channel '{out}' produced twice")
            produced.add(out)
            outputs.append(out)
        if not outputs or outputs[-1] != self.target:
            raise ConfigError("last stage must produce the sequence target")

    @property
    def model_targets(self) -> List[str]:
        return [s.model.target for s in self.stages if isinstance(s, ModelStage)]

    def model_for(self, channel: str) -> FnarxModel:
        for stage in self.stages:
            if isinstance(stage, ModelStage) and stage.model.target == channel:
                return stage.model
        raise KeyError(f"no model stage for channel '{channel}'")

    def to_dict(self) -> dict:
        stages = []
        for stage in self.stages:
            if isinstance(stage, TransformStage):
                stages.append({"kind": "transform", "spec": stage.spec.to_dict()})
            else:
                stages.append({"kind": "model", "model": stage.model.to_dict()})
        return {
            "schema_version": SEQUENCE_SCHEMA_VERSION,
            "target": self.target,
            "exogenous": list(self.exogenous),
            "stages": stages,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "ModelSequence":
        version = d.get("schema_version")
        if version != SEQUENCE_SCHEMA_VERSION:
            raise DataError(f"unsupported sequence schema version {version!r}")
        stages: List[Stage] = []
        for entry in d["stages"]:
            if entry["kind"] == "transform":
                stages.append(TransformStage(TransformSpec.from_dict(entry["spec"])))
            elif entry["kind"] == "model":
                stages.append(ModelStage(FnarxModel.from_dict(entry["model"])))
            else:
                raise DataError(f"unknown stage kind '{entry['kind']}'")
        return ModelSequence(
            target=str(d["target"]),
            exogenous=[str(x) for x in d["exogenous"]],
            stages=stages,
        )


def save_sequence(sequence: ModelSequence, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(sequence.to_dict(), fh, indent=1)
        fh.write("\n")


def load_sequence(path: str) -> ModelSequence:
    with open(path) as fh:
        return ModelSequence.from_dict(json.load(fh))


def predict(
    sequence: ModelSequence,
    inputs: Mapping[str, np.ndarray],
    dt: float,
    seeds: Optional[Mapping[str, np.ndarray]] = None,
) -> SequencePrediction:
    """Run the sequence on exogenous inputs, stage by stage.

    ``inputs`` maps each exogenous channel to a (n_traces, n_steps) array
    (1-D arrays are promoted to a single-trace batch). ``seeds`` optionally
    provides the first t0 true values per modeled channel; without seeds a
    model starts from zeros. Diverged traces are recorded per channel in
    ``fail_steps`` and propagate zeros downstream.
    """
    if not sequence.exogenous:
        raise DataError("sequence declares no exogenous channels to predict from")
    channels: Dict[str, np.ndarray] = {}
    shapes = set()
    for name in sequence.exogenous:
        if name not in inputs:
            raise DataError(f"prediction inputs missing exogenous channel '{name}'")
        arr = np.asarray(inputs[name], dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise DataError(f"input '{name}' must be 1-D or 2-D")
        channels[name] = arr
        shapes.add(arr.shape)
    if len(shapes) != 1:
        raise DataError(f"exogenous inputs must share one shape, got {shapes}")
    batch, n_steps = shapes.pop()
    fail_steps: Dict[str, np.ndarray] = {}
    for stage in sequence.stages:
        if isinstance(stage, TransformStage):
            channels[stage.spec.output] = apply_transform(stage.spec, channels, dt)
            continue
        model = stage.model
        model_inputs = {
            q: channels[q] for q in model.referenced_quantities if q != model.target
        }
        seed_block = None
        if seeds is not None and model.target in seeds and model.t0_steps > 0:
            seed_block = np.asarray(seeds[model.target], dtype=np.float64)
            if seed_block.ndim == 1:
                seed_block = seed_block[None, :]
            seed_block = seed_block[:, : model.t0_steps]
        preds, bad = forecast_batch(
            model, model_inputs, seed_block, n_steps=n_steps, batch=batch
        )
        channels[model.target] = preds
        fail_steps[model.target] = bad
    return SequencePrediction(channels=channels, fail_steps=fail_steps)


# ---------------------------------------------------------------------------
# Construction trace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    depth: int
    target: str
    column: str          # provenance label of the feature under test
    max_abs_rho: float
    mean_error: float
    flag: Assessment


@dataclass
class AlgoTrace:
    rows: List[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        self.rows.append(row)

    def to_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,depth,target,column,max_abs_rho,mean_error,flag\n")
            for r in self.rows:
                fh.write(
                    f"{r.iteration},{r.depth},{r.target},{r.column},"
                    f"{format_float(r.max_abs_rho)},{format_float(r.mean_error)},"
                    f"{r.flag.value}\n"
                )


@dataclass
class ConstructionResult:
    sequence: ModelSequence
    trace: AlgoTrace
    final_error: float
    models: Dict[str, FnarxModel]


# ---------------------------------------------------------------------------
# The construction loop
# ---------------------------------------------------------------------------


class _Builder:
    """Shared state of one construct() call across recursion levels."""

    def __init__(
        self,
        dataset: Dataset,
        target: str,
        fit_configs: Mapping[str, FitConfig],
        config: RankingConfig,
        default_fit_config: Optional[FitConfig],
    ):
        self.dataset = dataset
        self.target = target
        self.fit_configs = dict(fit_configs)
        self.config = config
        self.default_fit = default_fit_config
        self.start = time.monotonic()
        self.iteration = 0
        self.trace = AlgoTrace()
        # Working series: recorded values, swapped for model predictions
        # once a channel is modeled.
        self.working: Dict[str, np.ndarray] = {
            name: dataset.stack(name) for name in dataset.channel_names
        }
        self.models: Dict[str, FnarxModel] = {}
        self.order: List[str] = []
        self.transforms = dict(dataset.transforms)

    # -- config plumbing ----------------------------------------------------

    def fit_config_for(self, channel: str) -> FitConfig:
        cfg = self.fit_configs.get(channel, self.default_fit)
        if cfg is None:
            raise ConfigError(
                f"no fit configuration for channel '{channel}' and no default given"
            )
        if cfg.memory_steps is None:
            raise ConfigError(
                f"fit configuration for channel '{channel}' must set memory_steps"
            )
        return cfg

    def components_for(self, quantities: Sequence[str]) -> Optional[Dict[str, int]]:
        spec = self.config.components_per_quantity
        if spec is None:
            return None
        if isinstance(spec, int):
            return {q: spec for q in quantities}
        return {q: spec[q] for q in quantities if q in spec}

    def over_budget(self) -> bool:
        if self.config.max_iterations is not None and self.iteration >= self.config.max_iterations:
            return True
        if self.config.max_runtime is not None:
            if time.monotonic() - self.start >= self.config.max_runtime:
                return True
        return False

    # -- transform chain utilities -------------------------------------------

    def usable_channels(self, available: Sequence[str]) -> List[str]:
        """Channels whose whole transform chain stays inside ``available``."""
        avail = set(available)

        def chain_ok(name: str, seen: Set[str]) -> bool:
            if name not in avail:
                return False
            spec = self.transforms.get(name)
            if spec is None:
                return True
            if name in seen:
                raise ConfigError(f"transform cycle through '{name}'")
            return all(chain_ok(s, seen | {name}) for s in spec.sources)

        return [ch for ch in available if chain_ok(ch, set())]

    def unresolved_upstream(self, channel: str, available_s: Set[str]) -> List[str]:
        """Unmodeled intermediate channels feeding ``channel``, depth first."""
        found: List[str] = []

        def visit(name: str) -> None:
            spec = self.transforms.get(name)
            if spec is None:
                if name in available_s and name not in found:
                    found.append(name)
                return
            for s in spec.sources:
                visit(s)

        visit(channel)
        return found

    def downstream_transforms(self, changed: Set[str]) -> List[str]:
        """Transform outputs whose chains touch any changed channel, in
        dependency order."""
        affected: Set[str] = set()
        progress = True
        while progress:
            progress = False
            for name, spec in self.transforms.items():
                if name in affected:
                    continue
                if any(s in changed or s in affected for s in spec.sources):
                    affected.add(name)
                    progress = True
        order: List[str] = []
        placed: Set[str] = set()
        while len(order) < len(affected):
            advanced = False
            for name in sorted(affected):
                if name in placed:
                    continue
                spec = self.transforms[name]
                if all(s not in affected or s in placed for s in spec.sources):
                    order.append(name)
                    placed.add(name)
                    advanced = True
            if not advanced:
                raise ConfigError("transform chain contains a cycle")
        return order

    # -- recursion bookkeeping -----------------------------------------------

    def propagate_predictions(self, channel: str) -> Set[str]:
        """Swap ``channel``'s working series for its model's predictions and
        recompute every transform downstream of it. Returns the set of
        channels whose working series changed."""
        model = self.models[channel]
        inputs = {
            q: self.working[q]
            for q in model.referenced_quantities
            if q != channel
        }
        truth = self.dataset.stack(channel)
        seeds = truth[:, : model.t0_steps] if model.t0_steps > 0 else None
        preds, bad = forecast_batch(
            model, inputs, seeds, n_steps=truth.shape[1], batch=truth.shape[0]
        )
        n_bad = int(np.sum(bad >= 0))
        if n_bad:
            warnings.warn(
                f"predictions for '{channel}' diverged on {n_bad} training "
                "traces; zeros substituted from the first bad step",
                RuntimeWarning,
            )
        self.working[channel] = preds
        changed = {channel}
        for name in self.downstream_transforms({channel}):
            spec = self.transforms[name]
            self.working[name] = apply_transform(spec, self.working, self.dataset.dt)
            changed.add(name)
        return changed

    # -- the per-model loop ----------------------------------------------------

    def assemble(
        self, target: str, usable: List[str], memory: int
    ) -> Tuple[FeatureMatrix, Dict[str, "object"]]:
        specs = [WindowSpec(target, memory, WindowAlignment.PAST_ONLY)]
        for ch in usable:
            specs.append(WindowSpec(ch, memory, WindowAlignment.INCLUDE_CURRENT))
        series = {target: self.working[target], **{ch: self.working[ch] for ch in usable}}
        # The model's own windows come from recorded values: its predictions
        # do not exist yet, and at runtime those windows read its own output.
        series[target] = self.dataset.stack(target)
        comps = self.components_for([target] + usable)
        return assemble_from_series(
            series,
            specs,
            components_per_quantity=comps,
            realization_ids=[r.id for r in self.dataset.realizations],
        )

    def build_model(
        self, target: str, available: List[str], available_s: Set[str], depth: int
    ) -> FnarxModel:
        cfg = self.fit_config_for(target)
        memory = cfg.memory_steps
        usable = self.usable_channels(available)
        matrix, extractors = self.assemble(target, usable, memory)
        t0 = matrix.t0_steps
        truth = self.dataset.stack(target)
        n_traces, n_steps = truth.shape
        y_rows = truth[:, t0:].reshape(-1)

        scoring = ForecastData(
            inputs={ch: self.working[ch] for ch in usable},
            truth=truth,
            dt=self.dataset.dt,
        )
        include = scoring.include
        # Rows of traces excluded from scoring are also left out of ranking.
        row_mask = np.zeros(matrix.values.shape[0], dtype=bool)
        for pos in include:
            row_mask[matrix.trace_slice(int(pos))] = True

        # Ranking rows: evenly subsampled rows of the scored traces, fixed
        # for the whole loop so consecutive rankings stay comparable.
        masked = row_mask.nonzero()[0]
        rank_rows = masked[subsample_indices(masked.size, self.config.subsample)]

        key_index = matrix.key_index()
        A: Set[Tuple[str, int]] = set(key_index)
        C: List[Tuple[str, int]] = []
        E: Set[Tuple[str, int]] = set()

        zeros = np.zeros_like(truth)
        eps_min = float(
            np.mean([trace_error(truth[i], zeros[i]) for i in include])
        ) if len(include) else float("inf")
        residual_rows = y_rows.copy()
        incumbent: Optional[FnarxModel] = None

        def label_of(key: Tuple[str, int]) -> str:
            return f"{key[0]}[{key[1]}]"

        stopped_flagged = False
        while A:
            if self.over_budget():
                self.trace.append(
                    TraceRow(self.iteration, depth, target, "", 0.0, eps_min,
                             Assessment.STOPPED)
                )
                stopped_flagged = True
                break
            if eps_min <= self.config.error_threshold:
                self.trace.append(
                    TraceRow(self.iteration, depth, target, "", 0.0, eps_min,
                             Assessment.STOPPED)
                )
                stopped_flagged = True
                break
            self.iteration += 1

            keys = sorted(A, key=lambda k: key_index[k])
            positions = [key_index[k] for k in keys]
            order, abs_rho = rank_features(
                matrix.values[np.ix_(rank_rows, positions)],
                [matrix.columns[p] for p in positions],
                residual_rows[rank_rows],
                self.config,
            )
            best_local = order[0]
            winner = keys[best_local]
            rho_max = float(abs_rho[best_local])

            if rho_max < self.config.rho_threshold:
                self.trace.append(
                    TraceRow(self.iteration, depth, target, label_of(winner),
                             rho_max, eps_min, Assessment.STOPPED)
                )
                stopped_flagged = True
                break

            quantity = winner[0]
            recurse_on: Optional[str] = None
            if quantity in available_s:
                recurse_on = quantity
            elif quantity in self.transforms:
                upstream = self.unresolved_upstream(quantity, available_s)
                if upstream:
                    recurse_on = upstream[0]

            if recurse_on is not None:
                self.trace.append(
                    TraceRow(self.iteration, depth, target, label_of(winner),
                             rho_max, eps_min, Assessment.RECURSED)
                )
                child_available = [ch for ch in available if ch != recurse_on]
                child_s = (available_s - {recurse_on})
                child_model = self.build_model(
                    recurse_on, child_available, child_s, depth + 1
                )
                self.models[recurse_on] = child_model
                self.order.append(recurse_on)
                available_s = available_s - {recurse_on}
                changed = self.propagate_predictions(recurse_on)

                # Rebuild the feature matrix on the updated working series.
                # Unchanged quantities reproduce identical columns, so the
                # accepted set carries over; keys of changed quantities
                # return to the pool.
                matrix, extractors = self.assemble(target, usable, memory)
                key_index = matrix.key_index()
                all_keys = set(key_index)
                missing_from_C = [k for k in C if k not in all_keys]
                if missing_from_C:
                    raise ConfigError(
                        "accepted features vanished after recursion: "
                        f"{[label_of(k) for k in missing_from_C]}"
                    )
                if any(k[0] in changed for k in C):
                    raise ConfigError(
                        "accepted features reference a channel modeled later"
                    )
                A = {k for k in A if k in all_keys and k[0] not in changed}
                E = {k for k in E if k in all_keys and k[0] not in changed}
                A |= {k for k in all_keys if k[0] in changed}
                scoring = ForecastData(
                    inputs={ch: self.working[ch] for ch in usable},
                    truth=truth,
                    dt=self.dataset.dt,
                )
                continue

            # Trial fit with the winner added.
            trial_keys = C + [winner]
            sel = matrix.select([key_index[k] for k in trial_keys])
            model = fit_model(sel, extractors, y_rows, scoring, cfg, target=target)
            eps_new, preds = self._full_error(model, truth, include)

            if np.isfinite(eps_new) and eps_new < eps_min:
                C = trial_keys
                incumbent = model
                eps_min = eps_new
                residual_rows = (truth[:, t0:] - preds[:, t0:]).reshape(-1)
                A |= E
                E = set()
                flag = Assessment.ACCEPTED
            else:
                E.add(winner)
                flag = Assessment.REJECTED
            A.discard(winner)
            self.trace.append(
                TraceRow(self.iteration, depth, target, label_of(winner),
                         rho_max, eps_new, flag)
            )

        if not stopped_flagged and not A:
            self.trace.append(
                TraceRow(self.iteration, depth, target, "", 0.0, eps_min,
                         Assessment.STOPPED)
            )

        if incumbent is None:
            warnings.warn(
                f"no feature improved the forecast of '{target}'; "
                "falling back to a constant model",
                RuntimeWarning,
            )
            incumbent = intercept_model(target, float(np.mean(y_rows)), t0)
        return incumbent

    def _full_error(
        self, model: FnarxModel, truth: np.ndarray, include: np.ndarray
    ) -> Tuple[float, np.ndarray]:
        """Mean closed-loop error of ``model`` over the full training set,
        along with the predictions it was computed from."""
        inputs = {
            q: self.working[q]
            for q in model.referenced_quantities
            if q != model.target
        }
        seeds = truth[:, : model.t0_steps] if model.t0_steps > 0 else None
        preds, bad = forecast_batch(
            model, inputs, seeds, n_steps=truth.shape[1], batch=truth.shape[0]
        )
        if len(include) == 0 or np.any(bad[include] >= 0):
            return float("inf"), preds
        eps = np.array([trace_error(truth[i], preds[i]) for i in include])
        if not np.all(np.isfinite(eps)):
            return float("inf"), preds
        return float(np.mean(eps)), preds


def _referenced_transforms(
    models: Mapping[str, FnarxModel], transforms: Mapping[str, TransformSpec]
) -> Dict[str, TransformSpec]:
    """Transform specs needed, transitively, by any model input."""
    needed: Dict[str, TransformSpec] = {}

    def visit(name: str) -> None:
        spec = transforms.get(name)
        if spec is None or name in needed:
            return
        needed[name] = spec
        for s in spec.sources:
            visit(s)

    for model in models.values():
        for q in model.referenced_quantities:
            visit(q)
    return needed


def _assemble_sequence(
    target: str,
    exogenous: List[str],
    model_order: List[str],
    models: Mapping[str, FnarxModel],
    transforms: Mapping[str, TransformSpec],
) -> ModelSequence:
    pending = dict(_referenced_transforms(models, transforms))
    produced: Set[str] = set(exogenous)
    stages: List[Stage] = []

    def flush() -> None:
        progress = True
        while progress:
            progress = False
            for name in sorted(pending):
                spec = pending[name]
                if all(s in produced for s in spec.sources):
                    stages.append(TransformStage(spec))
                    produced.add(name)
                    del pending[name]
                    progress = True

    flush()
    for ch in model_order:
        flush()
        stages.append(ModelStage(models[ch]))
        produced.add(ch)
    flush()
    if pending:
        raise ConfigError(
            f"transforms {sorted(pending)} cannot be ordered causally"
        )
    return ModelSequence(target=target, exogenous=exogenous, stages=stages)


def construct(
    dataset: Dataset,
    fit_configs: Mapping[str, FitConfig],
    config: Optional[RankingConfig] = None,
    target: Optional[str] = None,
    default_fit_config: Optional[FitConfig] = None,
) -> ConstructionResult:
    """Build a causal chain of NARX models for the dataset's target channel.

    Parameters
    ----------
    dataset : Dataset
        Training traces with channel roles; exactly one channel must carry
        the target role unless ``target`` overrides it.
    fit_configs : mapping
        Per-channel fit hyperparameters; every channel that ends up being
        modeled needs an entry (or ``default_fit_config``) with
        ``memory_steps`` set.
    config : RankingConfig
        Ranking method, thresholds, and budget limits.
    target : str, optional
        Target channel; defaults to the channel with the target role.
    default_fit_config : FitConfig, optional
        Fallback for channels without an entry in ``fit_configs``.

    Returns a :class:`ConstructionResult` whose sequence predicts the
    target from exogenous inputs alone. Deterministic given its inputs.
    """
    if config is None:
        config = RankingConfig()
    if target is None:
        targets = dataset.channels_with_role(QuantityRole.TARGET)
        if len(targets) != 1:
            raise ConfigError(
                f"dataset has {len(targets)} target channels; pass target= explicitly"
            )
        target = targets[0]
    elif target not in dataset.channel_names:
        raise ConfigError(f"target channel '{target}' not in dataset")
    if dataset.n_ed < 1:
        raise DataError("construction needs at least one training trace")

    for name, role in dataset.roles.items():
        if role is QuantityRole.AUXILIARY_TRANSFORMED and name not in dataset.transforms:
            raise ConfigError(
                f"transformed channel '{name}' has no transform recipe; "
                "it cannot be computed at prediction time"
            )

    builder = _Builder(dataset, target, fit_configs, config, default_fit_config)
    # Channels carrying the target role are downstream responses: never
    # inputs to anything, even when an intermediate is modeled standalone.
    available = [
        ch
        for ch in dataset.channel_names
        if ch != target and dataset.roles[ch] is not QuantityRole.TARGET
    ]
    available_s = {
        ch
        for ch in dataset.channels_with_role(QuantityRole.INTERMEDIATE_RESPONSE)
        if ch != target
    }
    final_model = builder.build_model(target, available, available_s, depth=0)
    builder.models[target] = final_model
    builder.order.append(target)

    exogenous = dataset.channels_with_role(QuantityRole.EXOGENOUS)
    sequence = _assemble_sequence(
        target, exogenous, builder.order, builder.models, builder.transforms
    )
    truth = dataset.stack(target)
    scored = ForecastData.from_dataset(dataset, target)
    final_error, _ = builder._full_error(final_model, truth, scored.include)
    return ConstructionResult(
        sequence=sequence,
        trace=builder.trace,
        final_error=final_error,
        models=dict(builder.models),
    )
