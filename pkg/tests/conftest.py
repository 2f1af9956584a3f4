"""Shared fixtures.  Desk-scale kinetic data is cached in the pytest cache,
keyed by the generator source and configuration."""
import hashlib
import inspect
import json
import warnings

import numpy as np
import pytest

from trtclosure import dataset as D
from trtclosure import kinetic, physics
from trtclosure.kinetic import TransportConfig, run_transport

DESK = dict(n_cells=256, n_groups=16, gamma=1e9, T_in=1000.0)


def _cached_run(cache, name, cfg: TransportConfig):
    src = inspect.getsource(kinetic) + inspect.getsource(physics)
    key = hashlib.sha256((src + json.dumps(cfg.to_dict(), sort_keys=True, default=str)).encode()).hexdigest()[:16]
    root = cache.mkdir(f"trt-{name}-{key}")
    path = root / "dataset"
    if (path / "meta.json").exists():
        return D.read(path)
    ds = run_transport(cfg)
    D.write(ds, path)
    return ds


@pytest.fixture(scope="session")
def desk_m8(pytestconfig):
    return _cached_run(pytestconfig.cache, "m8", TransportConfig(n_angles=8, **DESK))


@pytest.fixture(scope="session")
def desk_m48(pytestconfig):
    return _cached_run(pytestconfig.cache, "m48", TransportConfig(n_angles=48, **DESK))


@pytest.fixture(scope="session")
def small_kinetic():
    # coarse and short, for plumbing tests
    return run_transport(TransportConfig(n_cells=64, n_groups=6, n_steps=20, gamma=1e9, T_in=300.0))


def planted_p1_data(N=256, n_t=200, sigma0=1.0, gamma=1e9, rho_cv=8e10):
    """Smooth data from a known constant-coefficient P1 system."""
    from trtclosure.solver import BoundarySpec, SolverConfig, p1_closure, simulate

    units = physics.DEFAULT_UNITS
    truth = p1_closure(sigma0, gamma, rho_cv)
    x = (np.arange(N) + 0.5) * 4.0 / N
    T = 300 + 400 * np.exp(-(((x - 2) / 0.5) ** 2))
    E = physics.alpha(gamma) * T / (units.c * sigma0) * (1 + 0.6 * np.exp(-(((x - 1.5) / 0.4) ** 2)))
    u0 = np.stack([rho_cv * T + E, 0 * x, T, sigma0 * E])
    times = np.linspace(0, 2e-10, n_t)
    ds, _ = simulate(truth, x, u0, times, BoundarySpec.outflow(), BoundarySpec.outflow(), SolverConfig(rtol=1e-9, atol=1e-12))
    return truth, ds.replace(params={**ds.params, "T_in": 700.0})


@pytest.fixture(scope="session")
def planted():
    return planted_p1_data()


@pytest.fixture(scope="session")
def planted_fit(planted):
    from trtclosure.learn import ClosureLearner

    truth, ds = planted
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        learner = ClosureLearner(refine=0).fit(ds)
    return truth, ds, learner


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _quiet_validity():
    from trtclosure.closure import ClosureValidityWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClosureValidityWarning)
        yield
