import time

import pytest

from shockdestab.pde_sim import run_destabilization_experiment

# smallest K of the default exponential scan with F >= |A'(-K)|/8
K_STAR = 1.25 ** 16

SCALAR_CONFIG = {"model": "scalar", "flux": "exponential", "K": K_STAR,
                 "weight": "constant", "eps": 1e-3, "lipschitz": 1.0, "steps": 5}

# the continuity horizon of the system shrinks like eps^2 / ([p] |Xdot|^2),
# so the time step is taken well below the advective limit
SYSTEM_CONFIG = {"model": "system", "gamma": 5.0 / 3.0, "v_minus": 1.0, "u_minus": 0.0,
                 "v_plus": 0.01, "weight": "affine", "weight_params": (0.5,),
                 "eps": 1e-3, "lipschitz": 1.0, "steps": 3, "cfl": 0.001}


def _timed(config):
    t0 = time.perf_counter()
    report = run_destabilization_experiment(config)
    return report, time.perf_counter() - t0


@pytest.fixture(scope="session")
def scalar_run():
    return _timed(SCALAR_CONFIG)


@pytest.fixture(scope="session")
def system_run():
    return _timed(SYSTEM_CONFIG)
