# src/services/capacity_service.py
import logging
from typing import Optional

import numpy as np

from src.config import settings
from src.domain.models import (
    CapacityDecay, CapacityResult, DecayRow, DiscreteDomain, Exhaustion, ScalingReport,
)
from src.errors import (
    AssertionFailure, DegenerateLevelsError, InvalidCondenserError, ValidationError,
)
from src.services import model_manifold_service
from src.services.plaplace_solver_service import p_energy, solve_dirichlet

logger = logging.getLogger(__name__)


def mesh_size(domain: DiscreteDomain) -> float:
    """Largest cell edge length seen by any gradient component."""
    return max(float(np.max(1.0 / np.abs(G.data))) for G in domain.grad_ops)


def capacity(domain: DiscreteDomain, K: np.ndarray, p: float, tol: Optional[float] = None,
             region: Optional[np.ndarray] = None) -> CapacityResult:
    """cap_p(K, Ω) with Ω = region (all nodes by default).

    The potential is 1 on K and 0 on the outer boundary and outside the region.
    """
    tol = tol or settings.SOLVER_TOL
    K = np.asarray(K, dtype=bool)
    region = np.ones(domain.n_nodes, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    if not K.any():
        raise InvalidCondenserError("condenser compact set is empty")
    if np.any(K & domain.outer_mask):
        raise InvalidCondenserError("condenser compact set touches the outer boundary")
    if np.any(K & ~region):
        raise InvalidCondenserError("condenser compact set is not inside the region")

    fixed = K | domain.outer_mask | ~region
    theta = K.astype(float)
    h, report = solve_dirichlet(domain, theta, p, tol=tol, fixed=fixed)

    # maximum principle
    lo, hi = float(h.values.min()), float(h.values.max())
    if lo < -10 * tol or hi > 1 + 10 * tol:
        raise AssertionFailure("maximum-principle", f"potential range [{lo!r}, {hi!r}] leaves [0, 1]")

    value = p_energy(domain, h, p)
    logger.debug("Capacity: p=%s |K|=%d |region|=%d value=%.12g status=%s",
                 p, int(K.sum()), int(region.sum()), value, report.status.value)
    return CapacityResult(value=value, potential=h, report=report, condenser=K, region=region)


def sublevel_scaling_check(result: CapacityResult, t: float, s: float, p: float,
                           tol: Optional[float] = None) -> ScalingReport:
    """cap_p({h ≥ s}, {h > t}) against cap_p(K, Ω) / (s - t)^{p-1}."""
    if not (0 <= t < s <= 1):
        raise ValidationError(f"need 0 <= t < s <= 1, got t={t} s={s}")
    domain = result.potential.domain
    h = result.potential.values

    # 1) level-set condenser
    K_s = (h >= s) & result.region
    region_t = (h > t) & result.region
    if not K_s.any():
        raise DegenerateLevelsError(f"{{h >= {s}}} is empty")
    if not np.any(region_t & ~K_s):
        raise DegenerateLevelsError(f"no nodes with {t} < h < {s}")

    # 2) measured vs predicted
    measured = capacity(domain, K_s, p, tol=tol, region=region_t).value
    predicted = result.value / (s - t) ** (p - 1.0)
    ratio = measured / predicted
    band = 5.0 * mesh_size(domain)
    report = ScalingReport(t=t, s=s, measured=measured, predicted=predicted, ratio=ratio, band=band)
    logger.info("Sublevel scaling: t=%s s=%s measured=%.10g predicted=%.10g ratio=%.8f band=%.3g",
                t, s, measured, predicted, ratio, band)
    if not report.within_band:
        raise AssertionFailure("sublevel-scaling", f"ratio {ratio:.8f} outside 1 ± {band:.3g}")
    return report


def _annulus_prediction(domain: DiscreteDomain, K: np.ndarray, zero_radius: float, p: float) -> Optional[float]:
    """Closed-form value when K is exactly the set of rings r ≤ a."""
    m = domain.manifold
    if m is None:
        return None
    r = domain.radii
    a = float(r[K].max())
    if not np.array_equal(K, r <= a) or a < m.base_radius or zero_radius <= a:
        return None
    return model_manifold_service.annulus_capacity(m, p, a, zero_radius)


def capacity_decay(domain: DiscreteDomain, K: np.ndarray, exhaustion: Exhaustion, p: float,
                   tol: Optional[float] = None) -> CapacityDecay:
    """cap_p(K, D_n) along an exhaustion, with the declared limit rule."""
    tol = tol or settings.SOLVER_TOL
    K = np.asarray(K, dtype=bool)
    if np.any(K & ~exhaustion[0]):
        raise InvalidCondenserError("K must lie in D_0")

    rows = []
    r = domain.radii
    for n, D in enumerate(exhaustion.levels):
        res = capacity(domain, K, p, tol=tol, region=D)
        outside = ~D
        zero_radius = float(r[outside].min()) if outside.any() else domain.r_max
        rows.append(DecayRow(n=n, r_max=float(r[D].max()), capacity=res.value,
                             predicted=_annulus_prediction(domain, K, zero_radius, p)))

    for prev, nxt in zip(rows[:-1], rows[1:]):
        if nxt.capacity > prev.capacity + 10 * tol * max(1.0, prev.capacity):
            raise AssertionFailure("capacity-monotonicity",
                                   f"cap(K, D_{nxt.n})={nxt.capacity!r} > cap(K, D_{prev.n})={prev.capacity!r}")

    limit, converged = rows[-1].capacity, False
    for prev, nxt in zip(rows[:-1], rows[1:]):
        if abs(prev.capacity - nxt.capacity) < settings.CAP_LIMIT_RTOL * rows[0].capacity:
            limit, converged = nxt.capacity, True
            break
    logger.info("Capacity decay: p=%s levels=%d first=%.8g last=%.8g limit_converged=%s",
                p, len(rows), rows[0].capacity, rows[-1].capacity, converged)
    return CapacityDecay(rows=rows, limit=limit, limit_converged=converged)
