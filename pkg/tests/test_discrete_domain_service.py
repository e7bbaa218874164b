# tests/test_discrete_domain_service.py
import math

import numpy as np
import pytest

from src.domain.models import DomainKind, ScalarField
from src.errors import InvalidRangeError, UnsupportedDimensionError, ValidationError
from src.services import discrete_domain_service as dd
from src.services.plaplace_solver_service import check_subsolution, check_supersolution, p_energy


# ---------- radial grids ----------

def test_single_cell_uses_the_midpoint_rule(plane):
    d = dd.build_radial_grid(plane, 2.0, 2.0, 1)
    assert d.n_nodes == 2 and d.n_cells == 1
    assert d.vol[0] == pytest.approx(2 * math.pi * 1.5 * 1.0, rel=1e-14)
    assert d.inner_mask.tolist() == [True, False]
    assert d.outer_mask.tolist() == [False, True]


def test_total_volume_of_the_annulus(plane):
    d = dd.build_radial_grid(plane, 2.0, 2.0, 4096)
    assert d.vol.sum() == pytest.approx(math.pi * 3.0, rel=1e-4)


def test_log_grading_gives_constant_log_steps(plane):
    d = dd.build_radial_grid(plane, 2.0, 100.0, 200, grading="log")
    steps = np.diff(np.log(d.radii))
    assert np.allclose(steps, math.log(100.0) / 200, rtol=1e-8)
    assert d.r_min == 1.0 and d.r_max == 100.0


def test_graded_nodes_ratio():
    r = dd.graded_nodes(1.0, 2.0, 16, ratio=1.1)
    dr = np.diff(r)
    assert np.allclose(dr[1:] / dr[:-1], 1.1, rtol=1e-9)
    assert r[0] == 1.0 and r[-1] == 2.0


def test_radial_grid_rejects_bad_ranges(plane):
    with pytest.raises(InvalidRangeError):
        dd.build_radial_grid(plane, 2.0, 1.0, 16)
    with pytest.raises(ValidationError):
        dd.build_radial_grid(plane, 2.0, 2.0, 0)
    with pytest.raises(ValidationError):
        dd.build_radial_grid(plane, 2.0, 2.0, 16, grading="cubic")


def test_energy_of_log_r(annulus_plane):
    fine = dd.build_radial_grid(annulus_plane.manifold, 2.0, 2.0, 4096)
    u = dd.field_from_radial(fine, np.log)
    assert p_energy(fine, u, 2.0) == pytest.approx(2 * math.pi * math.log(2.0), rel=1e-3)


# ---------- surface grids ----------

def test_surface_grid_layout(plane):
    d = dd.build_surface_grid(plane, 2.0, 16, 8)
    assert d.kind == DomainKind.SURFACE2D
    assert d.shape == (17, 8)
    assert d.n_nodes == 17 * 8 and d.n_cells == 16 * 8
    assert d.inner_mask.sum() == 8 and d.outer_mask.sum() == 8
    assert d.theta_periodic
    assert d.vol.sum() == pytest.approx(math.pi * 3.0, rel=1e-2)


def test_axisymmetric_energy_matches_the_radial_grid(plane):
    surf = dd.build_surface_grid(plane, 2.0, 64, 32)
    radial = dd.build_radial_grid(plane, 2.0, 2.0, 64)
    e_surf = p_energy(surf, np.log(surf.radii), 3.0)
    e_rad = p_energy(radial, np.log(radial.radii), 3.0)
    assert e_surf == pytest.approx(e_rad, rel=1e-12)


def test_surface_energy_of_log_r(plane):
    surf = dd.build_surface_grid(plane, 2.0, 256, 256)
    assert p_energy(surf, np.log(surf.radii), 2.0) == pytest.approx(2 * math.pi * math.log(2.0), rel=1e-2)


def test_angular_gradient_sees_theta(plane):
    surf = dd.build_surface_grid(plane, 2.0, 8, 64)
    u = np.cos(surf.theta)
    # ∫∫ |∂_θ u|² / r² · r dr dθ = π ln 2
    assert p_energy(surf, u, 2.0) == pytest.approx(math.pi * math.log(2.0), rel=2e-2)


def test_surface_grid_rejects_bad_inputs(plane, space):
    with pytest.raises(UnsupportedDimensionError):
        dd.build_surface_grid(space, 2.0, 16, 16)
    with pytest.raises(ValidationError):
        dd.build_surface_grid(plane, 2.0, 16, 9)


# ---------- fields, rings and exhaustions ----------

def test_ring_mask_on_surface(plane):
    surf = dd.build_surface_grid(plane, 2.0, 16, 8)
    ring = dd.ring_mask(surf, 1.5)
    assert ring.sum() == 8
    assert np.allclose(surf.radii[ring], 1.5)


def test_field_shape_is_checked(annulus_plane):
    with pytest.raises(ValidationError):
        ScalarField(annulus_plane, np.zeros(3))
    with pytest.raises(ValidationError):
        ScalarField(annulus_plane, np.full(annulus_plane.n_nodes, np.nan))


def test_discrete_radial_potential_is_discretely_p_harmonic(plane):
    # nodes 0.5 · 2^{i/40}: r = 1 is node 40
    d = dd.build_radial_grid(plane, 3.0, 64.0, 280, grading="log", r_min=0.5)
    for p in (2.0, 3.0):
        E = dd.discrete_radial_potential(d, p, r_bar=1.0)
        assert np.all(E[d.radii <= 1.0] == 0.0)
        assert np.all(np.diff(E[d.radii >= 1.0]) > 0)
        off = E == 0.0
        assert check_supersolution(d, E, p, tol=1e-9, exclude=off).passed
        assert check_subsolution(d, E, p, tol=1e-9, exclude=off).passed


def test_discrete_radial_potential_needs_a_ring_at_rbar(plane):
    d = dd.build_radial_grid(plane, 2.0, 2.0, 3)
    with pytest.raises(InvalidRangeError):
        dd.discrete_radial_potential(d, 2.0, r_bar=1.1)


def test_radial_exhaustion_is_nested_and_closed(annulus_plane):
    ex = dd.radial_exhaustion(annulus_plane, [1.0, 1.25, 1.5])
    assert len(ex) == 4
    assert ex[0].sum() == 1
    assert ex[-1].all()
    for a, b in zip(ex.levels[:-1], ex.levels[1:]):
        assert np.all(b[a]) and b.sum() > a.sum()


def test_sublevel_exhaustion_rejects_repeated_levels(annulus_plane):
    u = dd.field_from_radial(annulus_plane, np.log)
    with pytest.raises(ValidationError):
        dd.sublevel_exhaustion(u, [0.1, 0.1])
    ex = dd.sublevel_exhaustion(u, [0.1, 0.3])
    assert len(ex) == 3


def test_sublevel_region_strict_and_closed():
    d = dd.build_segment_grid(0.0, 1.0, 4)
    u = ScalarField(d, np.array([0.0, 0.25, 0.5, 0.75, 1.0]))
    assert dd.sublevel_region(u, 0.5).tolist() == [True, True, True, False, False]
    assert dd.sublevel_region(u, 0.5, strict=True).tolist() == [True, True, False, False, False]
