# src/services/model_manifold_service.py
import logging
import math
import warnings
from pathlib import Path
from typing import Callable, Iterable, List, Optional

import numpy as np
from scipy import integrate, optimize

from src.config import settings
from src.domain.models import (
    AreaKind, EvansLevelCheck, ModelManifold, Parabolicity, ParabolicityReport,
    RadialEvans, RadialProfile,
)
from src.errors import (
    AssertionFailure, ConfigError, DivergedIntegrandError, EvansUndefinedError,
    InvalidAnnulusError, InvalidRangeError, TableRangeError, ValidationError,
)
from src.infrastructure.artifacts import read_area_table

logger = logging.getLogger(__name__)

DEFAULT_CUTOFF_FACTOR = 1e6


# ---------- Parsing ----------

def _parse_params(raw: str) -> dict:
    out = {}
    for chunk in filter(None, (c.strip() for c in raw.split(","))):
        if "=" not in chunk:
            raise ConfigError(f"expected key=value in manifold spec, got {chunk!r}")
        k, v = chunk.split("=", 1)
        out[k.strip().lower()] = v.strip()
    return out


def parse_manifold(spec: str, base_radius: Optional[float] = None) -> ModelManifold:
    """Parse 'euclidean:n=3', 'power:n=2,alpha=1.5', 'logpower:n=2,alpha=1,beta=2',
    'hyperbolic:n=2' or 'table:path.csv[,n=2]'. An 'rbar=' key sets the base radius."""
    if ":" not in spec:
        raise ConfigError(f"manifold spec must look like kind:params, got {spec!r}")
    kind_raw, rest = spec.split(":", 1)
    try:
        kind = AreaKind(kind_raw.strip().lower())
    except ValueError:
        raise ConfigError(f"unknown area kind {kind_raw!r}")

    if kind == AreaKind.TABLE:
        path, _, tail = rest.partition(",")
        params = _parse_params(tail)
        r, a = read_area_table(Path(path.strip()))
        rbar = base_radius or float(params.get("rbar", r[0]))
        return ModelManifold(
            dimension=int(params.get("n", 2)), kind=kind, base_radius=rbar,
            table_r=r, table_area=a, source=spec,
        )

    params = _parse_params(rest)
    try:
        n = int(params.get("n", 2))
        alpha = float(params.get("alpha", 0.0))
        beta = float(params.get("beta", 0.0))
        rbar = base_radius or float(params.get("rbar", 1.0))
    except ValueError as e:
        raise ConfigError(f"bad numeric value in manifold spec {spec!r}: {e}")
    if kind in (AreaKind.POWER, AreaKind.LOGPOWER) and "alpha" not in params:
        raise ConfigError(f"{kind.value} manifold needs alpha")
    return ModelManifold(dimension=n, kind=kind, base_radius=rbar, alpha=alpha, beta=beta, source=spec)


# ---------- Quadrature helpers ----------

def _check_p(p: float) -> None:
    if not p > 1:
        raise ValidationError(f"p must be > 1, got {p}")


def _panels(a: float, b: float) -> np.ndarray:
    near = a + (b - a) * np.array([0.0, 1e-3, 1e-2, 1e-1, 1.0])
    k = int(np.clip(math.ceil(math.log2(b / a)) + 1, 2, 256))
    return np.unique(np.concatenate([near, np.geomspace(a, b, k)]))


def _quad(func: Callable[[float], float], a: float, b: float, quad_tol: float) -> float:
    """Adaptive Gauss-Kronrod over panels split near `a` and geometrically outward."""
    if b == a:
        return 0.0
    finite_b = b if np.isfinite(b) else max(2.0 * a, a + 10.0)
    edges = _panels(a, finite_b)
    samples = np.concatenate([edges[1:], 0.5 * (edges[:-1] + edges[1:])])
    with np.errstate(over="ignore", divide="ignore"):
        if not np.all(np.isfinite([func(x) for x in samples])):
            raise DivergedIntegrandError(f"integrand is not finite on ({a}, {finite_b})")

    pieces = [(func, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
    if not np.isfinite(b):
        # t = e^u turns power-law tails into exponential ones
        pieces.append((_log_substituted(func), math.log(finite_b), np.inf))

    total = 0.0
    for f, lo, hi in pieces:
        with warnings.catch_warnings(record=True) as caught, np.errstate(over="ignore", under="ignore"):
            warnings.simplefilter("always", integrate.IntegrationWarning)
            val, err = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=quad_tol, limit=400)
        if not np.isfinite(val):
            raise DivergedIntegrandError(f"quadrature diverged on ({lo}, {hi})")
        if caught and err > 1e-6 * max(abs(val), 1e-300):
            raise DivergedIntegrandError(f"quadrature failed on ({lo}, {hi}): est. error {err:.3e}")
        total += val
    return total


def _log_substituted(func: Callable[[float], float]) -> Callable[[float], float]:
    def g(u: float) -> float:
        t = math.exp(u) if u < 709.0 else math.inf
        if not math.isfinite(t):
            return 0.0
        return func(t) * t
    return g


def _integrand(m: ModelManifold, p: float) -> Callable[[float], float]:
    expo = -1.0 / (p - 1.0)
    return lambda t: float(m.area(t)) ** expo


# ---------- Operations ----------

def radial_p_harmonic(m: ModelManifold, p: float, r: float, r_bar: Optional[float] = None,
                      quad_tol: Optional[float] = None) -> float:
    """f_{p,r̄}(r) = ∫_{r̄}^r A(t)^{-1/(p-1)} dt."""
    _check_p(p)
    r_bar = m.base_radius if r_bar is None else r_bar
    if r < r_bar:
        raise InvalidRangeError(f"r={r} is below the base radius {r_bar}")
    return _quad(_integrand(m, p), r_bar, r, quad_tol or settings.QUAD_TOL)


def radial_profile(m: ModelManifold, p: float, radii: Iterable[float],
                   r_bar: Optional[float] = None, quad_tol: Optional[float] = None) -> RadialProfile:
    _check_p(p)
    r_bar = m.base_radius if r_bar is None else r_bar
    grid = np.asarray(list(radii), dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] < r_bar:
        raise InvalidRangeError("profile radii must increase from the base radius")
    tol = quad_tol or settings.QUAD_TOL
    func = _integrand(m, p)
    steps = [_quad(func, r_bar, grid[0], tol)]
    steps += [_quad(func, lo, hi, tol) for lo, hi in zip(grid[:-1], grid[1:])]
    values = np.cumsum(steps)
    if np.any(np.diff(values) <= 0):
        raise AssertionFailure("radial-monotonicity", "f_{p,r̄} is not strictly increasing on the grid")
    return RadialProfile(grid=grid, values=values, p=p)


def _tail_exponent(m: ModelManifold, p: float) -> Optional[tuple]:
    """(a, b) so that the integrand decays like r^{-a} (log r)^{-b}; None when unknown."""
    n = m.dimension
    if m.kind == AreaKind.EUCLIDEAN:
        return (n - 1) / (p - 1), 0.0
    if m.kind == AreaKind.POWER:
        return m.alpha / (p - 1), 0.0
    if m.kind == AreaKind.LOGPOWER:
        return m.alpha / (p - 1), m.beta / (p - 1)
    if m.kind == AreaKind.HYPERBOLIC:
        return math.inf, 0.0
    return None


def _diverges(a: float, b: float) -> bool:
    if math.isclose(a, 1.0, rel_tol=0.0, abs_tol=1e-12):
        return b <= 1.0 + 1e-12
    return a < 1.0


def f_at_infinity(m: ModelManifold, p: float, a: Optional[float] = None,
                  quad_tol: Optional[float] = None) -> float:
    """f_{p,a}(∞); +inf when the symbolic test says the integral diverges."""
    _check_p(p)
    a = m.base_radius if a is None else a
    expo = _tail_exponent(m, p)
    if expo is None:
        raise TableRangeError("table-defined area cannot be integrated to infinity")
    if _diverges(*expo):
        return math.inf
    return _tail_integral(m, p, a, quad_tol)


def _tail_integral(m: ModelManifold, p: float, c: float, quad_tol: Optional[float] = None) -> float:
    """∫_c^∞ A^{-1/(p-1)}, closed form for pure powers of r."""
    if m.kind in (AreaKind.EUCLIDEAN, AreaKind.POWER):
        a = _tail_exponent(m, p)[0]
        return c ** (1.0 - a) / (a - 1.0)
    return _quad(_integrand(m, p), c, math.inf, quad_tol or settings.QUAD_TOL)


def classify_parabolicity(m: ModelManifold, p: float, cutoff: Optional[float] = None,
                          quad_tol: Optional[float] = None) -> ParabolicityReport:
    _check_p(p)
    r_bar = m.base_radius
    if cutoff is None:
        cutoff = m.max_radius if not m.is_named else DEFAULT_CUTOFF_FACTOR * r_bar
    cutoff = min(cutoff, m.max_radius)
    if cutoff <= r_bar:
        raise InvalidRangeError(f"cutoff {cutoff} must exceed the base radius {r_bar}")

    f_r = radial_p_harmonic(m, p, cutoff, quad_tol=quad_tol)
    cap_r = m.omega * f_r ** (1.0 - p)

    # Richardson-style estimate of the tail from three geometric cutoffs
    rho = (cutoff / r_bar) ** (1.0 / 3.0)
    f_q = radial_p_harmonic(m, p, r_bar * rho, quad_tol=quad_tol)
    f_h = radial_p_harmonic(m, p, r_bar * rho * rho, quad_tol=quad_tol)
    d1, d2 = f_h - f_q, f_r - f_h
    extrapolated = d2 * (d2 / d1) / (1.0 - d2 / d1) if 0 < d2 < d1 else math.inf

    expo = _tail_exponent(m, p)
    if expo is None:
        status = Parabolicity.INCONCLUSIVE
        tail = extrapolated
        exponent = None
        logger.warning("Parabolicity inconclusive for table area: source=%s p=%s f(R)=%.6g",
                       m.source, p, f_r)
    else:
        exponent = expo[0]
        if _diverges(*expo):
            status, tail = Parabolicity.PARABOLIC, math.inf
        else:
            status = Parabolicity.NONPARABOLIC
            tail = _tail_integral(m, p, cutoff, quad_tol)

    logger.info("Classify: source=%s p=%s status=%s f(R_max)=%.6g tail=%s",
                m.source, p, status.value, f_r, tail)
    return ParabolicityReport(status=status, f_at_cutoff=f_r, tail_estimate=tail,
                              cutoff=cutoff, exponent=exponent, capacity_at_cutoff=cap_r)


def annulus_capacity(m: ModelManifold, p: float, a: float, b: float,
                     quad_tol: Optional[float] = None) -> float:
    """ω_{n-1} · f_{p,a}(b)^{1-p}; b may be +inf."""
    _check_p(p)
    if a < m.base_radius:
        raise InvalidRangeError(f"inner radius {a} is below the base radius {m.base_radius}")
    if not a < b:
        raise InvalidAnnulusError(f"annulus needs a < b, got a={a} b={b}")
    if math.isinf(b):
        return capacity_to_infinity(m, p, a, quad_tol)
    f = radial_p_harmonic(m, p, b, r_bar=a, quad_tol=quad_tol)
    return m.omega * f ** (1.0 - p)


def capacity_to_infinity(m: ModelManifold, p: float, a: Optional[float] = None,
                         quad_tol: Optional[float] = None) -> float:
    """cap_p(B_a) relative to the whole manifold; 0 in the p-parabolic case."""
    f = f_at_infinity(m, p, a, quad_tol)
    if math.isinf(f):
        return 0.0
    return m.omega * f ** (1.0 - p)


def level_radius(m: ModelManifold, p: float, t: float, quad_tol: Optional[float] = None) -> float:
    """Radius R with f_{p,r̄}(R) = t."""
    r_bar = m.base_radius
    if t == 0:
        return r_bar
    func = lambda r: radial_p_harmonic(m, p, r, quad_tol=quad_tol) - t
    hi = 2.0 * r_bar
    while func(hi) < 0:
        hi *= 2.0
        if hi > m.max_radius or hi > 1e300:
            raise TableRangeError(f"level t={t} is not reached inside the manifold range")
    return optimize.brentq(func, r_bar, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)


def radial_evans(m: ModelManifold, p: float, levels: List[float],
                 quad_tol: Optional[float] = None) -> RadialEvans:
    """Radial Evans potential E = f_{p,r̄} with its energy and capacity identities per level."""
    quad_tol = quad_tol or settings.QUAD_TOL
    report = classify_parabolicity(m, p, quad_tol=quad_tol)
    if report.status != Parabolicity.PARABOLIC:
        raise EvansUndefinedError(f"model is {report.status.value} for p={p}")
    if any(t < 0 for t in levels):
        raise ValidationError("Evans levels must be >= 0")

    tol = max(1e-8, 100.0 * quad_tol)
    expo = 1.0 - p / (p - 1.0)
    energy_integrand = lambda r: float(m.area(r)) ** expo  # A^{-p/(p-1)} · A

    checks = []
    for t in sorted(levels):
        radius = level_radius(m, p, t, quad_tol)
        energy = m.omega * _quad(energy_integrand, m.base_radius, radius, quad_tol)
        if t == 0:
            cap, cap_expected = math.inf, math.inf
        else:
            cap = annulus_capacity(m, p, m.base_radius, radius, quad_tol)
            cap_expected = m.omega * t ** (1.0 - p)
        check = EvansLevelCheck(t=t, radius=radius, energy=energy, energy_expected=m.omega * t,
                                capacity=cap, capacity_expected=cap_expected)
        if t > 0:
            for name, got, want in (("evans-energy-identity", energy, m.omega * t),
                                    ("evans-capacity-identity", cap, cap_expected)):
                if abs(got / want - 1.0) > tol:
                    logger.error("Identity failed: %s t=%s got=%.12g want=%.12g", name, t, got, want)
                    raise AssertionFailure(name, f"t={t}: {got!r} != {want!r}")
        checks.append(check)

    top = max([c.radius for c in checks] + [m.base_radius * (1 + 1e-9)])
    profile = radial_profile(m, p, np.linspace(m.base_radius, top, 65), quad_tol=quad_tol)
    logger.info("Radial Evans: source=%s p=%s levels=%s", m.source, p, [c.t for c in checks])
    return RadialEvans(profile=profile, checks=checks)
