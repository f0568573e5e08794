import numpy as np
import pytest

from aggorient import geometry, simgen


def random_planar(rng, n=40, scale=10.0):
    return geometry.PointSet(rng.uniform(0.0, scale, (n, 2)))


def random_rigid(rng, span=20.0):
    return geometry.RigidTransform(rng.uniform(-span, span, 2), rng.uniform(0.0, 2.0 * np.pi))


def ellipse_raster(rng, a_units=11.0, b_units=5.0, scale=10.0, sigma_e2=0.01):
    return simgen.noisy_ellipse_raster(scale * a_units, scale * b_units, rng, sigma_e2)


@pytest.fixture(scope="session")
def sim_cases_22():
    """A few (2.2, 2.2) generator cases shared across test modules."""
    params = simgen.SimParams.from_aspect_ratios(2.2, 2.2, n_cases=1, seed=7)
    rng = np.random.default_rng(11)
    return params, [simgen.simulate_case(params, rng, case_id=f"c{i}") for i in range(4)]
