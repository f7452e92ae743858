"""Shared builders for the test suite."""

import numpy as np
import pytest

from autonarx.fnarx_model import FitConfig, FnarxModel
from autonarx.mnarx_auto import RankingConfig, construct
from autonarx.poly_basis import generate_hyperbolic_set
from autonarx.signals import Dataset, QuantityRole, Realization
from autonarx.window_features import (
    FeatureColumn,
    FeatureExtractor,
    WindowAlignment,
    WindowSpec,
)


def linear_chain_dataset(n_traces=16, n_steps=300, seed=0):
    """Exogenous u drives intermediate w, which drives the target y.

    w[t] = 0.8 w[t-1] + 0.5 u[t-1],  y[t] = 0.6 y[t-1] + w[t-1].
    Both maps sit inside the model class, so a two-stage chain can match
    them to machine precision.
    """
    rng = np.random.default_rng(seed)
    reals = []
    for i in range(n_traces):
        u = rng.normal(size=n_steps)
        w = np.zeros(n_steps)
        y = np.zeros(n_steps)
        for t in range(1, n_steps):
            w[t] = 0.8 * w[t - 1] + 0.5 * u[t - 1]
            y[t] = 0.6 * y[t - 1] + w[t - 1]
        reals.append(Realization(id=i, channels={"u": u, "w": w, "y": y},
                                 n_steps=n_steps, dt=0.1))
    roles = {
        "u": QuantityRole.EXOGENOUS,
        "w": QuantityRole.INTERMEDIATE_RESPONSE,
        "y": QuantityRole.TARGET,
    }
    return Dataset(realizations=reals, roles=roles)


@pytest.fixture(scope="session")
def built_chain():
    """A two-stage chain constructed on the linear system, plus its data."""
    ds = linear_chain_dataset()
    fits = {
        "y": FitConfig(degree=2, q_norm=1.0, memory_steps=2),
        "w": FitConfig(degree=2, q_norm=1.0, memory_steps=2),
    }
    return construct(ds, fits, config=RankingConfig(rho_threshold=0.1)), ds


def explosive_model(target="y"):
    """Hand-built cubic autoregression that blows up from large seeds."""
    spec = WindowSpec(target, 1, WindowAlignment.PAST_ONLY)
    ext = FeatureExtractor(
        spec=spec,
        mean=np.zeros(1),
        projection=np.ones((1, 1)),
        eigenvalues=np.ones(1),
    )
    col = FeatureColumn(target, 0, f"{target}/p1", 1.0)
    basis = generate_hyperbolic_set(1, 3, 1.0)
    coef = np.zeros(basis.n_terms)
    cubic = [i for i in range(basis.n_terms) if basis.indices[i, 0] == 3][0]
    coef[cubic] = 2.0
    return FnarxModel(
        target=target,
        input_columns=[col],
        extractors={target: ext},
        standardization=(np.zeros(1), np.ones(1)),
        basis=basis,
        coefficients=coef,
        t0_steps=1,
    )
