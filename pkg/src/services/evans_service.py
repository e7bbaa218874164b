# src/services/evans_service.py
import logging
from typing import List, Optional, Sequence

import numpy as np

from src.config import settings
from src.domain.models import (
    AsymptoticsRow, DiscreteDomain, EvansLevel, EvansRun, ModelManifold, Parabolicity,
)
from src.errors import (
    AssertionFailure, EvansUndefinedError, InvalidCompactumError, OutOfTrustedRangeError,
    ValidationError,
)
from src.services.capacity_service import capacity
from src.services.discrete_domain_service import discrete_radial_potential, ring_mask
from src.services.model_manifold_service import classify_parabolicity
from src.services.plaplace_solver_service import check_subsolution, check_supersolution, solve_dirichlet

logger = logging.getLogger(__name__)

TRUSTED_FRACTION = 0.8


def _first_level_at_least(E: np.ndarray, tau: float) -> float:
    above = E[E >= tau]
    return float(above.min()) if above.size else float("inf")


def _ball_capacity(omega: float, E: np.ndarray, tau: float, p: float) -> float:
    """cap(B_r̄, {E < τ}) on the grid: the zero set starts at the first ring with E ≥ τ."""
    e_first = _first_level_at_least(E, tau)
    if e_first <= 0:
        return float("inf")
    return omega * e_first ** (1.0 - p)


def evans_iterate(domain: DiscreteDomain, K: np.ndarray, m: Optional[ModelManifold], p: float,
                  n_max: int, tol: Optional[float] = None, r_bar: Optional[float] = None,
                  quad_tol: Optional[float] = None) -> EvansRun:
    """e_n: p-harmonic on A_n \\ K, 0 on K, equal to E_{r̄} outside A_n = {E_{r̄} ≤ n}."""
    tol = tol or settings.SOLVER_TOL
    m = m or domain.manifold
    if m is None:
        raise ValidationError("Evans iteration needs a model manifold")
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    status = classify_parabolicity(m, p, quad_tol=quad_tol).status
    if status != Parabolicity.PARABOLIC:
        raise EvansUndefinedError(f"model is {status.value} for p={p}")

    r_bar = m.base_radius if r_bar is None else r_bar
    K = np.asarray(K, dtype=bool)
    r = domain.radii
    if not K.any():
        raise InvalidCompactumError("K is empty")
    if np.any(r[K] > r_bar * (1 + 1e-12)):
        raise InvalidCompactumError(f"K must lie in the ball r <= {r_bar}")

    E = discrete_radial_potential(domain, p, r_bar)
    on_ring = ring_mask(domain, r_bar)
    inside = (r < r_bar) & ~on_ring
    touches_ring = bool(np.any(K & on_ring))

    # capacity potential of (K, {r < r̄}) feeds both the m_n bound and boundary continuity
    h_in = cap_in = None
    if not touches_ring:
        res = capacity(domain, K, p, tol=tol, region=inside)
        h_in, cap_in = res.potential.values, res.value
        if cap_in <= 0:
            raise InvalidCompactumError("K has zero capacity in B_r̄")

    levels: List[EvansLevel] = []
    e_prev: Optional[np.ndarray] = None
    for n in range(1, n_max + 1):
        A_n = E <= n
        fixed = K | ~A_n | domain.outer_mask
        theta = np.where(K, 0.0, E)
        e, report = solve_dirichlet(domain, theta, p, tol=tol, fixed=fixed, initial=e_prev)
        if not report.converged:
            logger.warning("Evans solve not converged: n=%d residual=%.3e", n, report.residual)
        ev = e.values

        # 1) comparison and monotonicity
        if np.any(ev < E - 10 * tol):
            raise AssertionFailure("evans-comparison", f"n={n}: e_n < E_r̄ by {float((E - ev).max()):.3e}")
        if e_prev is not None and np.any(ev < e_prev - 10 * tol):
            raise AssertionFailure("evans-monotone", f"e_{n} < e_{n - 1}")

        # 2) ring extremes and the capacity bound
        m_n, M_n = float(ev[on_ring].min()), float(ev[on_ring].max())
        bound = None
        if cap_in is not None:
            ball_cap = _ball_capacity(domain.omega, E, n, p)
            bound = n * (ball_cap / cap_in) ** (1.0 / (p - 1.0))
            if m_n > bound * (1.0 + 10 * tol) + 10 * tol:
                raise AssertionFailure("evans-min-bound", f"n={n}: m_n={m_n:.6g} > {bound:.6g}")

        # 3) sandwich
        if np.any(ev > M_n + E + 10 * tol):
            raise AssertionFailure("evans-sandwich", f"n={n}: e_n exceeds M + E_r̄")

        levels.append(EvansLevel(n=n, field=e, m_n=m_n, M_n=M_n, bound=bound, converged=report.converged))
        logger.debug("Evans level: n=%d m_n=%.6g M_n=%.6g bound=%s iterations=%d", n, m_n, M_n, bound,
                     report.iterations)
        e_prev = ev

    limit = levels[-1].field
    last_fixed = K | ~(E <= n_max) | domain.outer_mask
    for name, check in (("super", check_supersolution), ("sub", check_subsolution)):
        res = check(domain, limit, p, tol=10 * tol, exclude=last_fixed)
        if not res.passed:
            raise AssertionFailure("evans-harmonic", f"{name}solution check fails at {res.offending.size} nodes")

    M = levels[-1].M_n
    if h_in is not None:
        # boundary continuity: e ≤ M (1 - h) inside the ball
        ball = inside | K
        if np.any(limit.values[ball] > M * (1.0 - h_in[ball]) + 10 * tol * max(1.0, M)):
            raise AssertionFailure("evans-boundary-continuity", "e exceeds M (1 - h) in B_r̄")

    logger.info("Evans iteration: p=%s n_max=%d |K|=%d m=%.6g M=%.6g", p, n_max, int(K.sum()),
                levels[-1].m_n, M)
    return EvansRun(levels=levels, limit=limit, radial=E, base=inside | on_ring, condenser=K, p=p,
                    r_bar=r_bar, M=M, m=levels[-1].m_n)


def capacity_asymptotics(run: EvansRun, p: float, t_list: Sequence[float],
                         tol: Optional[float] = None) -> List[AsymptoticsRow]:
    """t, cap(K, {e < t}), t^{p-1} cap, with the two-sided envelope from the run's own M."""
    tol = tol or settings.SOLVER_TOL
    domain: DiscreteDomain = run.limit.domain
    e, E, K, M = run.limit.values, run.radial, run.condenser, run.M
    n_max = len(run.levels)

    rows = []
    for t in t_list:
        if t > TRUSTED_FRACTION * n_max:
            raise OutOfTrustedRangeError(f"t={t} exceeds {TRUSTED_FRACTION} · n_max = {TRUSTED_FRACTION * n_max}")
        region = e < t
        if not np.any(region & ~K):
            raise OutOfTrustedRangeError(f"t={t} is below every value of e off K")
        cap_t = capacity(domain, K, p, tol=tol, region=region).value
        normalized = t ** (p - 1.0) * cap_t

        upper = t ** (p - 1.0) * _ball_capacity(domain.omega, E, t - M, p) if t > M else float("inf")
        lower = (((t - M) / t) ** p * t ** (p - 1.0) * _ball_capacity(domain.omega, E, t, p)) if t > M else 0.0

        # one ring of E can separate the node level set from the true one
        below = np.unique(E[(E > 0) & (E < t)])
        step = float(np.max(np.diff(np.concatenate([[0.0], below, [_first_level_at_least(E, t)]]))))
        band = 2.0 * step / max(t - M, step)
        if normalized < lower * (1.0 - band) or normalized > upper * (1.0 + band):
            raise AssertionFailure("capacity-asymptotics",
                                   f"t={t}: t^(p-1) cap = {normalized:.6g} outside [{lower:.6g}, {upper:.6g}]")
        rows.append(AsymptoticsRow(t=t, capacity=cap_t, normalized=normalized, lower=lower, upper=upper))
        logger.info("Asymptotics: t=%s cap=%.8g normalized=%.8g envelope=[%.6g, %.6g]",
                    t, cap_t, normalized, lower, upper)
    return rows
