# tests/conftest.py
import math

import numpy as np
import pytest

from src.services.discrete_domain_service import build_radial_grid
from src.services.model_manifold_service import parse_manifold


# -----------------------------
# Model manifolds
# -----------------------------
@pytest.fixture(scope="session")
def plane():
    return parse_manifold("euclidean:n=2")


@pytest.fixture(scope="session")
def space():
    return parse_manifold("euclidean:n=3")


# -----------------------------
# Grids shared across modules (built once, never mutated: domains are read-only)
# -----------------------------
@pytest.fixture(scope="session")
def annulus_plane(plane):
    """[1, 2] in the plane, 1024 uniform cells."""
    return build_radial_grid(plane, 2.0, 2.0, 1024)


@pytest.fixture(scope="session")
def long_log_plane(plane):
    """[1, e^75] in the plane, log-spaced: ln r steps of 0.125."""
    return build_radial_grid(plane, 2.0, math.exp(75.0), 600, grading="log")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture()
def area_table(tmp_path):
    """r, A table sampling A(r) = r on [1, 10]."""
    path = tmp_path / "area.csv"
    r = np.linspace(1.0, 10.0, 37)
    path.write_text("r,A\n" + "".join(f"{float(x)!r},{float(x)!r}\n" for x in r), encoding="utf-8")
    return path
