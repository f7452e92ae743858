"""Data model and persistence for multichannel time-series experimental designs.

A dataset is an ordered collection of realizations: aligned, uniformly
sampled multichannel series sharing one channel set, step count and step
size. Each channel carries a quantity role that drives how the automatic
model construction treats it (driving input, deterministic transform,
intermediate response needing its own model, or final target).

On disk a dataset is a directory with a ``manifest.json`` and one
``real_<id>.csv`` per realization. Floats are written with shortest
round-trip decimal representation, so save followed by load is bit-exact.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Tuple

import numpy as np

from .errors import ConfigError, DataError

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


class QuantityRole(str, Enum):
    """Role of a channel in the surrogate construction."""

    EXOGENOUS = "Exogenous"
    AUXILIARY_TRANSFORMED = "AuxiliaryTransformed"
    INTERMEDIATE_RESPONSE = "IntermediateResponse"
    TARGET = "Target"


@dataclass(frozen=True)
class TransformSpec:
    """Registered deterministic map producing one auxiliary channel.

    Parameters
    ----------
    output : str
        Name of the produced channel.
    kind : str
        Key into the transform registry (see ``mnarx_auto.TRANSFORMS``).
    sources : tuple of str
        Input channel names, in the order the transform expects them.
    params : dict
        Transform-specific parameters (window lengths, mode indices, ...).
    """

    output: str
    kind: str
    sources: Tuple[str, ...]
    params: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "output": self.output,
            "kind": self.kind,
            "sources": list(self.sources),
            "params": dict(self.params),
        }

    @staticmethod
    def from_dict(d: Mapping) -> "TransformSpec":
        return TransformSpec(
            output=str(d["output"]),
            kind=str(d["kind"]),
            sources=tuple(d["sources"]),
            params=dict(d.get("params", {})),
        )


@dataclass
class Realization:
    """One aligned multichannel time series.

    All channels must have exactly ``n_steps`` samples taken at spacing
    ``dt`` seconds.
    """

    id: int
    channels: Dict[str, np.ndarray]
    n_steps: int
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise DataError(f"realization {self.id}: dt must be > 0, got {self.dt}")
        for name, values in self.channels.items():
            values = np.asarray(values, dtype=np.float64)
            self.channels[name] = values
            if values.ndim != 1 or values.shape[0] != self.n_steps:
                raise DataError(
                    f"realization {self.id}: channel '{name}' has "
                    f"{values.shape[0] if values.ndim == 1 else values.shape} samples, "
                    f"expected {self.n_steps}"
                )


@dataclass
class Dataset:
    """An experimental design: realizations plus channel-role annotations.

    ``roles`` fixes the channel order (insertion order = manifest order).
    ``transforms`` maps AuxiliaryTransformed channel names to the registered
    deterministic transform that produces them. ``meta`` is free-form
    provenance (seeds, generator parameters).
    """

    realizations: List[Realization]
    roles: Dict[str, QuantityRole]
    meta: Dict[str, object] = field(default_factory=dict)
    transforms: Dict[str, TransformSpec] = field(default_factory=dict)

    def __post_init__(self):
        names = set(self.roles)
        for real in self.realizations:
            if set(real.channels) != names:
                raise DataError(
                    f"realization {real.id}: channel set {sorted(real.channels)} "
                    f"does not match roles {sorted(names)}"
                )
        if self.realizations:
            n0, dt0 = self.realizations[0].n_steps, self.realizations[0].dt
            for real in self.realizations:
                if real.n_steps != n0:
                    raise DataError(
                        f"realization {real.id}: n_steps {real.n_steps} != {n0}"
                    )
                if real.dt != dt0:
                    raise DataError(f"realization {real.id}: dt {real.dt} != {dt0}")
        for name, spec in self.transforms.items():
            if self.roles.get(name) != QuantityRole.AUXILIARY_TRANSFORMED:
                raise DataError(
                    f"transform declared for '{name}' but its role is not "
                    f"AuxiliaryTransformed"
                )

    # -- convenience views -------------------------------------------------

    @property
    def n_ed(self) -> int:
        return len(self.realizations)

    @property
    def channel_names(self) -> List[str]:
        return list(self.roles)

    @property
    def n_steps(self) -> int:
        if not self.realizations:
            raise DataError("empty dataset has no n_steps")
        return self.realizations[0].n_steps

    @property
    def dt(self) -> float:
        if not self.realizations:
            raise DataError("empty dataset has no dt")
        return self.realizations[0].dt

    def stack(self, channel: str) -> np.ndarray:
        """All realizations of one channel as a (n_ed, n_steps) array."""
        if channel not in self.roles:
            raise DataError(f"unknown channel '{channel}'")
        return np.stack([r.channels[channel] for r in self.realizations])

    def channels_with_role(self, role: QuantityRole) -> List[str]:
        return [name for name, r in self.roles.items() if r is role]


def format_float(x: float) -> str:
    """Shortest decimal string that round-trips the exact float64 value."""
    return repr(float(x))


def _write_manifest(dataset: Dataset, path: str) -> None:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "dt": dataset.realizations[0].dt if dataset.realizations else None,
        "n_steps": dataset.realizations[0].n_steps if dataset.realizations else None,
        "channels": dataset.channel_names,
        "roles": {name: role.value for name, role in dataset.roles.items()},
        "realization_ids": [r.id for r in dataset.realizations],
        "transforms": {k: v.to_dict() for k, v in dataset.transforms.items()},
        "meta": dataset.meta,
    }
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write a dataset directory; ``load_dataset`` restores it bit-exactly.

    Layout: ``manifest.json`` plus one ``real_<id>.csv`` per realization
    (header row = channel names, one row per time step). Datasets with no
    channels produce the manifest only.
    """
    os.makedirs(path, exist_ok=True)
    _write_manifest(dataset, path)
    names = dataset.channel_names
    if not names:
        return
    for real in dataset.realizations:
        fname = os.path.join(path, f"real_{real.id}.csv")
        cols = [real.channels[name] for name in names]
        with open(fname, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for k in range(real.n_steps):
                writer.writerow([format_float(col[k]) for col in cols])


def load_dataset(path: str) -> Dataset:
    """Read a dataset directory written by ``save_dataset``.

    Validates channel counts, lengths, and finiteness; errors name the
    offending realization and channel.
    """
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise DataError(f"missing manifest: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DataError(
            f"unsupported schema version {manifest.get('schema_version')!r}"
        )
    names = list(manifest["channels"])
    roles = {}
    for name in names:
        raw = manifest["roles"].get(name)
        try:
            roles[name] = QuantityRole(raw)
        except ValueError:
            raise DataError(f"channel '{name}': unknown role {raw!r}") from None
    n_steps = manifest["n_steps"]
    dt = manifest["dt"]
    transforms = {
        k: TransformSpec.from_dict(v)
        for k, v in manifest.get("transforms", {}).items()
    }

    realizations = []
    for rid in manifest["realization_ids"]:
        if not names:
            realizations.append(
                Realization(id=rid, channels={}, n_steps=n_steps or 0, dt=dt or 1.0)
            )
            continue
        fname = os.path.join(path, f"real_{rid}.csv")
        if not os.path.isfile(fname):
            raise DataError(f"realization {rid}: missing data file {fname}")
        with open(fname, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != names:
                raise DataError(
                    f"realization {rid}: header {header} does not match "
                    f"manifest channels {names}"
                )
            rows = [row for row in reader if row]
        if len(rows) != n_steps:
            raise DataError(
                f"realization {rid}: {len(rows)} rows where {n_steps} declared"
            )
        data = np.empty((n_steps, len(names)), dtype=np.float64)
        for k, row in enumerate(rows):
            if len(row) != len(names):
                raise DataError(
                    f"realization {rid}: row {k} has {len(row)} fields, "
                    f"expected {len(names)}"
                )
            for j, cell in enumerate(row):
                data[k, j] = float(cell)
        for j, name in enumerate(names):
            bad = np.flatnonzero(~np.isfinite(data[:, j]))
            if bad.size:
                raise DataError(
                    f"realization {rid}: non-finite value in channel "
                    f"'{name}' at step {int(bad[0])}"
                )
        channels = {name: data[:, j].copy() for j, name in enumerate(names)}
        realizations.append(
            Realization(id=rid, channels=channels, n_steps=n_steps, dt=dt)
        )

    return Dataset(
        realizations=realizations,
        roles=roles,
        meta=dict(manifest.get("meta", {})),
        transforms=transforms,
    )


def split_dataset(
    dataset: Dataset, n_train: int, seed: int
) -> Tuple[Dataset, Dataset]:
    """Random disjoint, exhaustive train/test partition; deterministic per seed.

    Realization order within each part follows the original dataset order.
    """
    n = dataset.n_ed
    if not 0 < n_train < n:
        raise ConfigError(f"n_train must be in (0, {n}), got {n_train}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    train_pos = np.sort(perm[:n_train])
    test_pos = np.sort(perm[n_train:])

    def subset(positions: np.ndarray, tag: str) -> Dataset:
        meta = dict(dataset.meta)
        meta["split"] = {"seed": seed, "n_train": n_train, "part": tag}
        return Dataset(
            realizations=[dataset.realizations[i] for i in positions],
            roles=dict(dataset.roles),
            meta=meta,
            transforms=dict(dataset.transforms),
        )

    return subset(train_pos, "train"), subset(test_pos, "test")
