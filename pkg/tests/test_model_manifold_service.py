# tests/test_model_manifold_service.py
import math

import numpy as np
import pytest

from src.domain.models import AreaKind, Parabolicity
from src.errors import (
    ConfigError, EvansUndefinedError, InvalidAnnulusError, InvalidRangeError, TableRangeError,
    ValidationError,
)
from src.services import model_manifold_service as mm


# ---------- parsing ----------

def test_parse_named_forms():
    m = mm.parse_manifold("power:n=2,alpha=1.5")
    assert m.kind == AreaKind.POWER and m.alpha == 1.5 and m.dimension == 2
    assert mm.parse_manifold("logpower:n=2,alpha=1,beta=2").beta == 2.0
    assert mm.parse_manifold("euclidean:n=3,rbar=2").base_radius == 2.0


@pytest.mark.parametrize("spec", ["euclidean", "sphere:n=2", "power:n=2", "euclidean:n=two", "euclidean:n"])
def test_parse_rejects_bad_specs(spec):
    with pytest.raises(ConfigError):
        mm.parse_manifold(spec)


def test_parse_table(area_table):
    m = mm.parse_manifold(f"table:{area_table},n=2")
    assert m.kind == AreaKind.TABLE
    assert m.base_radius == 1.0
    # log-monotone interpolation reproduces A(r) = r exactly between samples
    assert m.area(3.3) == pytest.approx(3.3, rel=1e-12)
    with pytest.raises(TableRangeError):
        m.area(11.0)


def test_table_without_header_is_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,1.0\n2.0,2.0\n3.0,3.0\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        mm.parse_manifold(f"table:{path}")


# ---------- radial p-harmonic function ----------

@pytest.mark.parametrize("n,p,expected", [
    (2, 2.0, math.log(2.0)),
    (3, 2.0, 0.5),
    (2, 3.0, 2.0 * (math.sqrt(2.0) - 1.0)),
    (3, 1.5, (1.0 - 2.0 ** -3) / 3.0),
])
def test_radial_p_harmonic_closed_forms(n, p, expected):
    m = mm.parse_manifold(f"euclidean:n={n}")
    assert mm.radial_p_harmonic(m, p, 2.0) == pytest.approx(expected, rel=1e-10)


def test_radial_p_harmonic_at_base_radius_is_zero(plane):
    assert mm.radial_p_harmonic(plane, 2.0, 1.0) == 0.0


def test_radial_p_harmonic_rejects_bad_inputs(plane):
    with pytest.raises(InvalidRangeError):
        mm.radial_p_harmonic(plane, 2.0, 0.5)
    with pytest.raises(ValidationError):
        mm.radial_p_harmonic(plane, 1.0, 2.0)


def test_table_integration_stays_in_range(area_table):
    m = mm.parse_manifold(f"table:{area_table}")
    assert mm.radial_p_harmonic(m, 2.0, 10.0) == pytest.approx(math.log(10.0), rel=1e-9)
    with pytest.raises(TableRangeError):
        mm.radial_p_harmonic(m, 2.0, 20.0)


def test_radial_profile_matches_log(plane):
    radii = np.linspace(1.1, 5.0, 20)
    prof = mm.radial_profile(plane, 2.0, radii)
    assert np.all(np.diff(prof.values) > 0)
    assert np.allclose(prof.values, np.log(radii), rtol=1e-9)
    with pytest.raises(InvalidRangeError):
        mm.radial_profile(plane, 2.0, [2.0, 1.5])


# ---------- parabolicity ----------

@pytest.mark.parametrize("spec,p,status", [
    ("euclidean:n=2", 2.0, Parabolicity.PARABOLIC),
    ("euclidean:n=3", 2.0, Parabolicity.NONPARABOLIC),
    ("euclidean:n=3", 3.0, Parabolicity.PARABOLIC),
    ("euclidean:n=3", 4.0, Parabolicity.PARABOLIC),
    ("euclidean:n=4", 3.0, Parabolicity.NONPARABOLIC),
    ("power:n=2,alpha=2", 2.0, Parabolicity.NONPARABOLIC),
    ("logpower:n=2,alpha=1,beta=1", 2.0, Parabolicity.PARABOLIC),
])
def test_classify_parabolicity(spec, p, status):
    report = mm.classify_parabolicity(mm.parse_manifold(spec), p)
    assert report.status == status
    assert report.f_at_cutoff > 0
    assert report.capacity_at_cutoff > 0
    if status == Parabolicity.PARABOLIC:
        assert math.isinf(report.tail_estimate)
    else:
        assert 0 < report.tail_estimate < math.inf


def test_classify_table_is_inconclusive(area_table):
    report = mm.classify_parabolicity(mm.parse_manifold(f"table:{area_table}"), 2.0)
    assert report.status == Parabolicity.INCONCLUSIVE
    assert report.cutoff == 10.0


@pytest.mark.parametrize("n,p", [(4, 3.0), (3, 2.5), (5, 3.5), (3, 1.5)])
def test_nonparabolic_when_dimension_exceeds_p(n, p):
    m = mm.parse_manifold(f"euclidean:n={n}")
    report = mm.classify_parabolicity(m, p)
    assert report.status == Parabolicity.NONPARABOLIC
    a = (n - 1) / (p - 1)
    assert report.tail_estimate == pytest.approx(report.cutoff ** (1 - a) / (a - 1), rel=1e-12)


def test_slowly_decaying_tail_is_integrated():
    # A = r^{3/2}: ∫_1^∞ t^{-3/2} dt = 2, ∫_4^∞ = 1
    m = mm.parse_manifold("logpower:n=2,alpha=1.5,beta=0")
    assert mm.f_at_infinity(m, 2.0) == pytest.approx(2.0, rel=1e-8)
    assert mm.f_at_infinity(m, 2.0, 4.0) == pytest.approx(1.0, rel=1e-8)
    report = mm.classify_parabolicity(m, 2.0)
    assert report.status == Parabolicity.NONPARABOLIC
    assert report.tail_estimate == pytest.approx(2.0 / math.sqrt(report.cutoff), rel=1e-8)


def test_euclidean_dichotomy_follows_the_exponent():
    for n in (2, 3, 4):
        m = mm.parse_manifold(f"euclidean:n={n}")
        for p in (1.5, 2.0, 3.0, 4.0, 5.0):
            parabolic = mm.classify_parabolicity(m, p).status == Parabolicity.PARABOLIC
            assert parabolic == (p >= n)


# ---------- capacities ----------

def test_annulus_capacity_closed_forms(plane, space):
    assert mm.annulus_capacity(plane, 2.0, 1.0, 2.0) == pytest.approx(2 * math.pi / math.log(2.0), rel=1e-9)
    assert mm.annulus_capacity(space, 2.0, 1.0, math.inf) == pytest.approx(4 * math.pi, rel=1e-9)
    assert mm.annulus_capacity(plane, 2.0, 1.0, math.inf) == 0.0


def test_annulus_capacity_rejects_bad_annuli(plane):
    with pytest.raises(InvalidAnnulusError):
        mm.annulus_capacity(plane, 2.0, 2.0, 2.0)
    with pytest.raises(InvalidRangeError):
        mm.annulus_capacity(plane, 2.0, 0.5, 2.0)


def test_capacity_to_infinity(space):
    assert mm.capacity_to_infinity(space, 2.0, 2.0) == pytest.approx(8 * math.pi, rel=1e-9)
    assert mm.f_at_infinity(space, 2.0) == pytest.approx(1.0, rel=1e-9)
    assert mm.capacity_to_infinity(space, 3.0) == 0.0


# ---------- Evans identities ----------

def test_level_radius_inverts_the_profile(plane):
    assert mm.level_radius(plane, 2.0, 1.0) == pytest.approx(math.e, rel=1e-12)
    assert mm.level_radius(plane, 2.0, 0.0) == 1.0


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_radial_evans_identities(p):
    m = mm.parse_manifold("euclidean:n=2")
    run = mm.radial_evans(m, p, [0.0, 1.0, 2.0, 4.0])
    for check in run.checks[1:]:
        assert check.energy == pytest.approx(2 * math.pi * check.t, rel=1e-8)
        assert check.capacity == pytest.approx(2 * math.pi * check.t ** (1 - p), rel=1e-8)
    assert run.profile.values[-1] == pytest.approx(4.0, rel=1e-8)
    assert run.profile.grid[0] == 1.0 and run.profile.values[0] == 0.0


def test_radial_evans_needs_a_parabolic_model(space):
    with pytest.raises(EvansUndefinedError):
        mm.radial_evans(space, 2.0, [1.0])


def test_quadrature_tolerance_is_threaded_through(monkeypatch, plane):
    seen = []
    real = mm._quad

    def spy(func, a, b, quad_tol):
        seen.append(quad_tol)
        return real(func, a, b, quad_tol)

    monkeypatch.setattr(mm, "_quad", spy)
    mm.radial_evans(plane, 2.0, [1.0, 2.0], quad_tol=1e-7)
    assert seen and set(seen) == {1e-7}
