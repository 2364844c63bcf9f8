import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from biopsym.anatomy import ZoneAxes, generate_ellipsoid_mesh, prostate_model_from_mesh
from biopsym.volume import PhantomSpec, SlicePlane, extract_slice, generate_phantom

# single-core box: keep examples modest and drop the per-example deadline
settings.register_profile(
    "ci", max_examples=50, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

GLAND_CENTER = (0.0, 5.0, 34.0)
GLAND_SEMI_AXES = (17.0, 13.0, 15.0)


@pytest.fixture(scope="session")
def phantom128():
    return generate_phantom(PhantomSpec())


@pytest.fixture(scope="session")
def gland_mesh():
    return generate_ellipsoid_mesh(GLAND_CENTER, GLAND_SEMI_AXES, subdivisions=3)


@pytest.fixture(scope="session")
def prostate(gland_mesh):
    return prostate_model_from_mesh(gland_mesh, axes=ZoneAxes(cc_descending=True))


@pytest.fixture(scope="session")
def warm_slice_kernel(phantom128):
    """First extract_slice call JIT-compiles; do it before anything timed."""
    plane = SlicePlane(center=(0.0, 0.0, 30.0), u_axis=(1.0, 0.0, 0.0),
                       v_axis=(0.0, 1.0, 0.0), width_mm=10.0, height_mm=10.0,
                       px_w=4, px_h=4)
    extract_slice(phantom128, plane)


def random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_plane(rng, px=64, extent=40.0, lo=(-25.0, -25.0, 5.0), hi=(25.0, 25.0, 60.0)):
    u = random_unit(rng)
    v = rng.normal(size=3)
    v -= v.dot(u) * u
    v /= np.linalg.norm(v)
    c = rng.uniform(lo, hi)
    return SlicePlane(center=tuple(c), u_axis=tuple(u), v_axis=tuple(v),
                      width_mm=extent, height_mm=extent, px_w=px, px_h=px)
