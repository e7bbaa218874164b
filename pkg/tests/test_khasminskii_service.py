# tests/test_khasminskii_service.py
import math

import numpy as np
import pytest

from src.domain.models import Parabolicity, ScalarField, SolveStatus
from src.errors import (
    CannotConstructError, GridTooSmallError, InvalidWitnessError, ValidationError,
)
from src.services import khasminskii_service as ks
from src.services.discrete_domain_service import (
    build_radial_grid, discrete_radial_potential, radial_exhaustion,
)
from src.services.plaplace_solver_service import check_supersolution, gradient_norm, p_energy

STEPS = 5


# ---------- fixtures ----------

@pytest.fixture(scope="module")
def wide_plane(plane):
    """[1, e^66] in the plane with ln r steps of 0.0825: room for five induction steps."""
    return build_radial_grid(plane, 2.0, math.exp(66.0), 800, grading="log")


@pytest.fixture(scope="module")
def reverse_run(wide_plane):
    return ks.reverse_khasminskii(wide_plane, wide_plane.inner_mask, 2.0, STEPS)


@pytest.fixture(scope="module")
def reverse_run_energy(wide_plane):
    f = ks.log_level_function(wide_plane, wide_plane.inner_mask)
    return ks.reverse_khasminskii(wide_plane, wide_plane.inner_mask, 3.0, STEPS, f=f, energy_rule=True)


# ---------- forward direction ----------

def test_forward_check_on_the_plane(plane):
    d = build_radial_grid(plane, 2.0, math.exp(8.0), 320, grading="log")
    kappa = ScalarField(d, discrete_radial_potential(d, 2.0))
    ex = radial_exhaustion(d, [math.exp(k) for k in range(1, 8)])
    report = ks.forward_khasminskii_check(d, d.inner_mask, kappa, 2.0, ex)
    assert report.conclusion == Parabolicity.PARABOLIC
    assert all(row.holds for row in report.rows)
    m = [row.m_n for row in report.rows]
    assert m[0] == pytest.approx(1.0, abs=0.03)
    assert all(b > a for a, b in zip(m[:-1], m[1:]))
    caps = [row.capacity for row in report.rows]
    assert caps[-1] == pytest.approx(2 * math.pi / 8.0, rel=1e-3)


def test_forward_check_with_a_bounded_witness_is_inconclusive(space):
    d = build_radial_grid(space, 2.0, 32.0, 160, grading="log")
    kappa = ScalarField(d, discrete_radial_potential(d, 2.0))
    ex = radial_exhaustion(d, [2.0, 4.0, 8.0, 16.0])
    report = ks.forward_khasminskii_check(d, d.inner_mask, kappa, 2.0, ex)
    assert report.conclusion == Parabolicity.INCONCLUSIVE
    assert max(row.m_n for row in report.rows) < 1.0


def test_forward_check_rejects_bad_witnesses(annulus_plane):
    d = annulus_plane
    ex = radial_exhaustion(d, [1.0, 1.5])
    with pytest.raises(InvalidWitnessError):
        ks.forward_khasminskii_check(d, d.inner_mask, ScalarField(d, d.radii - 1.5), 2.0, ex)
    with pytest.raises(InvalidWitnessError):
        ks.forward_khasminskii_check(d, d.inner_mask, ScalarField(d, d.radii ** 2 - 1.0), 2.0, ex)


def test_forward_check_accepts_the_constructed_witness(wide_plane, reverse_run):
    ex = radial_exhaustion(wide_plane, [math.exp(4.0), math.exp(16.0), math.exp(32.0), math.exp(48.0)])
    report = ks.forward_khasminskii_check(wide_plane, wide_plane.inner_mask, reverse_run.final, 2.0, ex)
    assert all(row.holds for row in report.rows)
    caps = [row.capacity for row in report.rows]
    assert caps[-1] <= 0.7 * caps[0]


# ---------- p = 2 summation and proper finite-energy functions ----------

def test_linear_sum_construction(long_log_plane):
    d = long_log_plane
    ex = radial_exhaustion(d, [1.0, math.exp(3.0), math.exp(15.0)])
    kappa = ks.linear_sum_construction(d, d.inner_mask, ex)
    assert kappa.values[0] == pytest.approx(0.0, abs=1e-9)
    assert kappa.values[-1] == pytest.approx(2.0)
    assert np.all(np.diff(kappa.values) >= -1e-12)
    assert check_supersolution(d, kappa, 2.0, exclude=d.inner_mask).passed


def test_linear_sum_needs_p_two_and_room(long_log_plane, annulus_plane):
    ex = radial_exhaustion(long_log_plane, [1.0, math.exp(3.0)])
    with pytest.raises(ValidationError):
        ks.linear_sum_construction(long_log_plane, long_log_plane.inner_mask, ex, p=3.0)
    tight = radial_exhaustion(annulus_plane, [1.0, 1.5])
    with pytest.raises(CannotConstructError):
        ks.linear_sum_construction(annulus_plane, annulus_plane.inner_mask, tight)


def test_proper_finite_energy_function(long_log_plane):
    d = long_log_plane
    ex = radial_exhaustion(d, [1.0, math.exp(3.0), math.exp(15.0)])
    f, energy = ks.proper_finite_energy_function(d, ex, 2.0)
    assert energy < (2 ** -0.5 + 2 ** -1) ** 2
    assert f.values[-1] == pytest.approx(2.0)
    assert np.all(f.values[~ex[2]] >= 1.0 - 1e-9)


# ---------- reverse construction ----------

def test_log_level_function(wide_plane):
    f = ks.log_level_function(wide_plane, wide_plane.inner_mask)
    assert f.values[0] == 0.0
    assert f.values[-1] == pytest.approx(66.0 / 0.25)


def test_finite_energy_level_function(wide_plane, reverse_run):
    f = ks.finite_energy_level_function(wide_plane, wide_plane.inner_mask, 2.0)
    assert f.values[0] == 0.0
    assert f.values[-1] == pytest.approx(66.0 / 0.25)
    assert np.all(np.diff(f.values) >= -1e-9)
    np.testing.assert_allclose(reverse_run.f.values, f.values)
    assert reverse_run.f_energy == pytest.approx(p_energy(wide_plane, f, 2.0))
    assert math.isfinite(reverse_run.f_energy) and reverse_run.f_energy > 0


def test_finite_energy_level_function_needs_a_parabolic_end(space):
    d = build_radial_grid(space, 2.0, math.exp(12.0), 160, grading="log")
    with pytest.raises(CannotConstructError):
        ks.finite_energy_level_function(d, d.inner_mask, 2.0)
    with pytest.raises(CannotConstructError):
        ks.reverse_khasminskii(d, d.inner_mask, 2.0, 3)


def test_reverse_run_invariants(wide_plane, reverse_run):
    run = reverse_run
    assert len(run.stages) == STEPS
    j_bars = [st.j_bar for st in run.stages]
    assert all(b >= a for a, b in zip(j_bars[:-1], j_bars[1:]))
    assert all(j & (j - 1) == 0 for j in j_bars)
    for st in run.stages:
        assert st.sup_gap < 0.5 ** (st.n + 1)
        assert np.all(st.s_after.values >= st.s_before.values - 1e-9)
        assert st.sweep[-1].j == st.j_bar
    final = run.final.values
    assert np.all(final[wide_plane.inner_mask] == 0.0)
    assert np.all(final[wide_plane.outer_mask] == STEPS)
    assert check_supersolution(wide_plane, run.final, 2.0, tol=1e-9, exclude=run.base).passed
    assert all(st.converged and all(e.converged for e in st.sweep) for st in run.stages)


def test_reverse_run_grows_like_log(wide_plane, reverse_run):
    r = wide_plane.radii
    mid = (r > math.e) & ~wide_plane.outer_mask
    ratio = reverse_run.final.values[mid] / np.log(r[mid])
    assert ratio.min() > 0 and ratio.max() / ratio.min() < 50


def test_reverse_run_with_the_energy_rule(wide_plane, reverse_run_energy):
    run = reverse_run_energy
    deltas = [st.delta_energy for st in run.stages]
    assert all(b < a for a, b in zip(deltas[:-1], deltas[1:]))
    for st in run.stages[1:]:
        assert st.delta_energy < 2.0 ** (-st.n)
    total = gradient_norm(wide_plane, run.final, 3.0)
    assert total <= run.energy_budget * (1 + 1e-9)


def test_energy_rule_run_at_p_two(wide_plane):
    run = ks.reverse_khasminskii(wide_plane, wide_plane.inner_mask, 2.0, 2, energy_rule=True)
    assert [st.j_bar for st in run.stages] == [2, 256]
    assert run.stages[1].delta_energy < 0.5
    assert run.stages[1].sweep[0].delta_energy >= 0.5
    total = gradient_norm(wide_plane, run.final, 2.0)
    assert total <= run.energy_budget * (1 + 1e-9)


def test_energy_rule_failure_names_the_rule(plane):
    d = build_radial_grid(plane, 2.0, math.exp(12.0), 160, grading="log")
    f = ks.log_level_function(d, d.inner_mask)
    with pytest.raises(GridTooSmallError, match="energy rule"):
        ks.reverse_khasminskii(d, d.inner_mask, 2.0, 2, f=f, energy_rule=True)


@pytest.mark.parametrize("log_r_max, cells", [(12.0, 160), (16.0, 213)])
def test_same_grid_separates_plane_from_space(plane, space, log_r_max, cells):
    # ln r steps of about 0.075; three steps fit in the plane, space stalls at step 2 however far out
    plane_grid, space_grid = (build_radial_grid(m, 2.0, math.exp(log_r_max), cells, grading="log")
                              for m in (plane, space))
    run = ks.reverse_khasminskii(plane_grid, plane_grid.inner_mask, 2.0, 3,
                                 f=ks.log_level_function(plane_grid, plane_grid.inner_mask))
    assert [st.j_bar for st in run.stages] == [2, 8, 32]
    with pytest.raises(GridTooSmallError, match="step 2: gap test"):
        ks.reverse_khasminskii(space_grid, space_grid.inner_mask, 2.0, 3,
                               f=ks.log_level_function(space_grid, space_grid.inner_mask))


def test_reverse_run_rejects_bad_parameters(wide_plane):
    with pytest.raises(ValidationError):
        ks.reverse_khasminskii(wide_plane, wide_plane.inner_mask, 2.0, 0)
    with pytest.raises(ValidationError):
        ks.reverse_khasminskii(wide_plane, wide_plane.inner_mask, 2.0, 2, gap_base=1.0)
    negative = ScalarField(wide_plane, -wide_plane.radii)
    with pytest.raises(ValidationError):
        ks.reverse_khasminskii(wide_plane, wide_plane.inner_mask, 2.0, 2, f=negative)


# ---------- energy chain ----------

@pytest.mark.parametrize("which", ["reverse_run", "reverse_run_energy"])
def test_energy_chain_audit_passes_on_every_step(which, request):
    run = request.getfixturevalue(which)
    for st in run.stages:
        audit = ks.energy_chain_audit(st, run.p)
        assert audit.passed
        half, ns = audit.link_a
        assert half >= ns * (1 - 1e-9)
        full, bound = audit.link_b
        assert full <= bound * (1 + 1e-9)
        if st.n > 0:
            assert audit.link_c is not None


def test_unconverged_solves_are_recorded(monkeypatch, plane):
    real = ks.solve_obstacle

    def capped(spec, tol=None):
        u, report = real(spec, tol=tol)
        report.status = SolveStatus.MAX_ITER
        return u, report

    monkeypatch.setattr(ks, "solve_obstacle", capped)
    d = build_radial_grid(plane, 2.0, math.exp(6.0), 96, grading="log")
    run = ks.reverse_khasminskii(d, d.inner_mask, 2.0, 1, f=ks.log_level_function(d, d.inner_mask))
    stage = run.stages[0]
    assert not stage.converged
    assert stage.sweep and not any(e.converged for e in stage.sweep)
