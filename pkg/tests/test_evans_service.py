# tests/test_evans_service.py
import math

import numpy as np
import pytest

from src.errors import EvansUndefinedError, InvalidCompactumError, OutOfTrustedRangeError
from src.services import evans_service as ev
from src.services.discrete_domain_service import build_radial_grid, build_surface_grid

N_MAX = 10
# nodes 0.9 · (1/0.9)^{i/2}: r = 1 is the third ring
R_MAX = 0.9 * (1.0 / 0.9) ** 128


@pytest.fixture(scope="module")
def disc(plane):
    return build_surface_grid(plane, R_MAX, 256, 256, grading="log", r_min=0.9)


@pytest.fixture(scope="module")
def half_arc(disc):
    return disc.inner_mask & (disc.theta < math.pi)


@pytest.fixture(scope="module")
def half_arc_run(disc, half_arc, plane):
    return ev.evans_iterate(disc, half_arc, plane, 2.0, N_MAX)


def test_half_arc_run_invariants(disc, half_arc, half_arc_run):
    run = half_arc_run
    e, E = run.limit.values, run.radial
    assert len(run.levels) == N_MAX
    assert np.all(e >= E - 1e-8)
    # strictly above the radial field off K inside the ball
    inside = (disc.radii < 1.0 - 1e-9) & ~half_arc
    assert np.all(e[inside] > E[inside])
    assert np.all(e <= E + run.M + 1e-8)
    assert np.all(e[half_arc] == 0.0)
    assert 0 < run.m <= run.M


def test_half_arc_levels_are_monotone(half_arc_run):
    levels = half_arc_run.levels
    for a, b in zip(levels[:-1], levels[1:]):
        assert np.all(b.field.values >= a.field.values - 1e-8)
    for lv in levels:
        assert lv.bound is not None and lv.m_n <= lv.bound * (1 + 1e-8)
        assert lv.converged


def test_half_arc_capacity_asymptotics(half_arc_run):
    rows = ev.capacity_asymptotics(half_arc_run, 2.0, [2.0, 4.0, 8.0])
    normalized = [row.normalized for row in rows]
    assert max(normalized) / min(normalized) < 1.3
    for row in rows:
        assert row.capacity > 0
        assert row.lower <= row.upper


def test_asymptotics_refuse_untrusted_levels(half_arc_run):
    with pytest.raises(OutOfTrustedRangeError):
        ev.capacity_asymptotics(half_arc_run, 2.0, [9.0])


def test_radial_run_recovers_the_radial_potential(plane):
    d = build_radial_grid(plane, 2.0, math.exp(6.0), 240, grading="log")
    run = ev.evans_iterate(d, d.inner_mask, plane, 2.0, 4)
    # K is the whole unit circle, so e is E itself
    assert np.max(np.abs(run.limit.values - run.radial)) < 1e-8
    assert run.M == pytest.approx(0.0, abs=1e-8)


def test_evans_needs_a_parabolic_model(space):
    d = build_radial_grid(space, 2.0, 8.0, 64)
    with pytest.raises(EvansUndefinedError):
        ev.evans_iterate(d, d.inner_mask, space, 2.0, 4)


def test_evans_rejects_bad_compacta(plane):
    d = build_radial_grid(plane, 2.0, 8.0, 64, r_min=0.5)
    with pytest.raises(InvalidCompactumError):
        ev.evans_iterate(d, np.zeros(d.n_nodes, dtype=bool), plane, 2.0, 4)
    with pytest.raises(InvalidCompactumError):
        ev.evans_iterate(d, d.radii >= 2.0, plane, 2.0, 4)
