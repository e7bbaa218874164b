# src/services/khasminskii_service.py
import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from src.config import settings
from src.domain.models import (
    AuditReport, DiscreteDomain, Exhaustion, ForwardReport, ForwardRow, KhasminskiiRun,
    LemmaStarStatus, ObstacleProblemSpec, Parabolicity, ScalarField, SolveStatus, StageRecord,
    SweepEntry,
)
from src.errors import (
    AssertionFailure, CannotConstructError, GridTooSmallError, InfeasibleObstacleError,
    InvalidWitnessError, ValidationError,
)
from src.services.capacity_service import capacity
from src.services.convexity_service import lemma_star_check, sigma_function
from src.services.discrete_domain_service import radial_exhaustion
from src.services.plaplace_solver_service import (
    check_supersolution, gradient_norm, p_energy, solve_obstacle,
)

logger = logging.getLogger(__name__)

AUDIT_SLACK = 1e-9


# ---------- Helpers ----------

def _cell_vectors(domain: DiscreteDomain, u: np.ndarray) -> np.ndarray:
    return np.stack([G @ u for G in domain.grad_ops], axis=1)


def _slack(x: float) -> float:
    return AUDIT_SLACK * max(1.0, abs(x))


def _looks_unbounded(m: List[float]) -> bool:
    """m_n doubles across the exhaustion and its increments do not die out."""
    if len(m) < 3 or m[0] <= 0:
        return False
    inc = np.diff(m)
    half = len(inc) // 2
    early, late = float(np.mean(inc[:half])), float(np.mean(inc[half:]))
    return m[-1] >= 2.0 * m[0] and early > 0 and late >= 0.5 * early


def _complement_potentials(domain: DiscreteDomain, K: np.ndarray, exhaustion: Exhaustion, p: float,
                           tol: float, start: int = 0) -> List[Tuple[int, np.ndarray, float]]:
    """(n, h̃_n = 1 - h_n, cap(K, D_n)) for every level from `start`."""
    out = []
    for n in range(start, len(exhaustion)):
        res = capacity(domain, K, p, tol=tol, region=exhaustion[n])
        out.append((n, 1.0 - res.potential.values, res.value))
    return out


# ---------- Forward direction ----------

def forward_khasminskii_check(domain: DiscreteDomain, K: np.ndarray, kappa: ScalarField, p: float,
                              exhaustion: Exhaustion, tol: Optional[float] = None) -> ForwardReport:
    """Checks 1 - h_n ≤ κ / m_n on every D_n \\ K, with m_n = min κ on the ring just outside D_n."""
    tol = tol or settings.SOLVER_TOL
    K = np.asarray(K, dtype=bool)
    k = kappa.values

    # 1) witness validity
    if np.any(k < -10 * tol):
        raise InvalidWitnessError("κ takes negative values")
    if np.any(np.abs(k[K]) > 10 * tol):
        raise InvalidWitnessError("κ does not vanish on K")
    check = check_supersolution(domain, kappa, p, tol=10 * tol, exclude=K)
    if not check.passed:
        raise InvalidWitnessError(f"κ is not p-superharmonic off K at {check.offending.size} nodes "
                                  f"(worst {check.worst:.3e})")

    # 2) per-level comparison
    rows = []
    for n, D in enumerate(exhaustion.levels):
        ring = domain.neighbors_of(D) if not D.all() else domain.outer_mask
        region = D if not D.all() else ~domain.outer_mask
        m_n = float(k[ring].min())
        if m_n <= 0:
            raise InvalidWitnessError(f"κ vanishes on the boundary of D_{n}")
        res = capacity(domain, K, p, tol=tol, region=D)
        gap = (1.0 - res.potential.values) - k / m_n
        inside = region & ~K
        holds = bool(np.all(gap[inside] <= 10 * tol))
        if not holds:
            raise AssertionFailure("khasminskii-comparison",
                                   f"D_{n}: 1 - h_n exceeds κ/m_n by {float(gap[inside].max()):.3e}")
        rows.append(ForwardRow(n=n, m_n=m_n, capacity=res.value, holds=holds))

    caps = [r.capacity for r in rows]
    decreasing = all(b <= a + 10 * tol * max(1.0, a) for a, b in zip(caps[:-1], caps[1:]))
    conclusion = Parabolicity.PARABOLIC if decreasing and _looks_unbounded([r.m_n for r in rows]) \
        else Parabolicity.INCONCLUSIVE
    logger.info("Forward Khas'minskii: p=%s levels=%d m=[%.4g .. %.4g] cap=[%.6g .. %.6g] conclusion=%s",
                p, len(rows), rows[0].m_n, rows[-1].m_n, caps[0], caps[-1], conclusion.value)
    return ForwardReport(rows=rows, conclusion=conclusion)


# ---------- p = 2 summation ----------

def linear_sum_construction(domain: DiscreteDomain, K: np.ndarray, exhaustion: Exhaustion,
                            tol: Optional[float] = None, p: float = 2.0) -> ScalarField:
    """𝒦 = Σ_k h̃_{n(k)} with sup_{D_k} h̃_{n(k)} ≤ 2^{-k}; the sum of harmonic pieces is linear only for p = 2."""
    if p != 2:
        raise ValidationError("the summation construction needs p = 2")
    tol = tol or settings.SOLVER_TOL
    K = np.asarray(K, dtype=bool)
    pots = _complement_potentials(domain, K, exhaustion, p, tol)

    total = np.zeros(domain.n_nodes)
    chosen: List[int] = []
    k = 1
    while k < len(exhaustion) and 2.0 ** (-k) >= tol:
        D_k = exhaustion[k]
        after = chosen[-1] if chosen else -1
        pick = next((n for n, ht, _ in pots if n > after and float(ht[D_k].max()) <= 2.0 ** (-k)), None)
        if pick is None:
            break
        total += pots[pick][1]
        chosen.append(pick)
        k += 1
    if not chosen:
        raise CannotConstructError("no exhaustion level brings sup_{D_1} h̃ below 1/2")

    field = ScalarField(domain, total)
    check = check_supersolution(domain, field, p, tol=10 * tol, exclude=K)
    if not check.passed:
        raise AssertionFailure("supersolution", f"summed witness fails at {check.offending.size} nodes")
    logger.info("Linear sum construction: terms=%d levels=%s outer=%.6g", len(chosen), chosen,
                float(total[domain.outer_mask].max()))
    return field


def proper_finite_energy_function(domain: DiscreteDomain, exhaustion: Exhaustion, p: float,
                                  tol: Optional[float] = None) -> Tuple[ScalarField, float]:
    """f = Σ_k h̃_{n(k)} with sup_{D_k} h̃ ≤ 2^{-k} and D_p(h̃) < 2^{-k}, K = D_0."""
    tol = tol or settings.SOLVER_TOL
    K = exhaustion[0]
    pots = _complement_potentials(domain, K, exhaustion, p, tol, start=1)

    total = np.zeros(domain.n_nodes)
    chosen: List[int] = []
    k = 1
    while k < len(exhaustion):
        D_k = exhaustion[k]
        after = chosen[-1] if chosen else 0
        pick = next((n for n, ht, cap in pots
                     if n > after and float(ht[D_k].max()) <= 2.0 ** (-k) and cap < 2.0 ** (-k)), None)
        if pick is None:
            break
        total += pots[pick - 1][1]
        chosen.append(pick)
        k += 1
    if not chosen:
        raise CannotConstructError("no exhaustion level meets both selection bounds for k = 1")

    f = ScalarField(domain, total)
    energy = p_energy(domain, f, p)
    budget = sum(2.0 ** (-kk / p) for kk in range(1, len(chosen) + 1))
    if energy ** (1.0 / p) > budget + _slack(budget):
        raise AssertionFailure("energy-budget", f"‖∇f‖_p={energy ** (1 / p):.6g} > {budget:.6g}")
    for kk, n in enumerate(chosen, start=1):
        outside = ~exhaustion[n]
        if outside.any() and float(total[outside].min()) < kk - 1 - 10 * tol:
            raise AssertionFailure("proper-growth", f"f < {kk - 1} outside D_{n}")
    logger.info("Proper finite-energy function: terms=%d levels=%s energy=%.6g budget^p=%.6g",
                len(chosen), chosen, energy, budget ** p)
    return f, energy


# ---------- Reverse construction ----------

def log_level_function(domain: DiscreteDomain, K: np.ndarray, step: Optional[float] = None) -> ScalarField:
    """f = ln(r / r_K) / step, clipped at 0; r_K is the outermost radius of K."""
    step = step or settings.LEVEL_LOG_STEP
    r_K = float(domain.radii[np.asarray(K, dtype=bool)].max())
    return ScalarField(domain, np.maximum(0.0, np.log(domain.radii / r_K) / step))


def finite_energy_level_function(domain: DiscreteDomain, K: np.ndarray, p: float,
                                 tol: Optional[float] = None, step: Optional[float] = None) -> ScalarField:
    """Proper finite-energy function over the balls r_K·e^k, rescaled to the range of the log levels."""
    step = step or settings.LEVEL_LOG_STEP
    K = np.asarray(K, dtype=bool)
    r_K = float(domain.radii[K].max())
    span = math.log(float(domain.radii.max()) / r_K)
    radii, seen = [], 0
    for k in range(int(math.ceil(span))):
        count = int(np.count_nonzero(domain.radii <= r_K * math.exp(k) * (1 + 1e-12)))
        if seen < count < domain.n_nodes:
            radii.append(r_K * math.exp(k))
            seen = count
    f, _ = proper_finite_energy_function(domain, radial_exhaustion(domain, radii), p, tol=tol)
    top = float(f.values[domain.outer_mask].max())
    return ScalarField(domain, f.values * (span / step) / top)


def _sweep_limit(f: np.ndarray, outer: np.ndarray) -> int:
    return int(math.floor(float(f[outer].min()))) - 1


def reverse_khasminskii(domain: DiscreteDomain, K: np.ndarray, p: float, steps: int,
                        f: Optional[ScalarField] = None, gap_base: float = 0.5,
                        energy_rule: bool = False, tol: Optional[float] = None) -> KhasminskiiRun:
    """Builds 𝒦 = s^{(N)} by obstacle problems with ψ_j = s + min(f/j, 1) on Ω_j = D_{j+1} \\ D_0."""
    tol = tol or settings.SOLVER_TOL
    K = np.asarray(K, dtype=bool)
    if steps < 1:
        raise ValidationError("need at least one induction step")
    if not 0 < gap_base < 1:
        raise ValidationError(f"gap base must lie in (0, 1), got {gap_base}")
    f = finite_energy_level_function(domain, K, p, tol=tol) if f is None else f
    fv = f.values
    if np.any(fv < 0) or np.any(fv[K] != 0):
        raise ValidationError("exhaustion function must be >= 0 and vanish on K")
    f_energy = p_energy(domain, f, p)
    if not math.isfinite(f_energy):
        raise ValidationError(f"exhaustion function has no finite {p}-energy")

    base = fv <= 0                       # D_0
    outer = domain.outer_mask
    j_max = _sweep_limit(fv, outer)
    s = np.zeros(domain.n_nodes)
    stages: List[StageRecord] = []
    j_start = 1

    for n in range(steps):
        gap_target = gap_base ** (n + 1)
        D_next = fv <= n + 1
        sweep: List[SweepEntry] = []
        previous: Optional[np.ndarray] = None
        j = j_start
        accepted = None
        failing = "gap"
        while accepted is None:
            if j > j_max:
                last = sweep[-1] if sweep else None
                if failing == "energy":
                    detail = (f"energy rule ‖∇δ‖_p < {2.0 ** (-n):.3g} fails for every j <= {j_max} "
                              f"(last {last.delta_energy:.3g})")
                else:
                    detail = (f"gap test sup δ < {gap_target:.3g} fails for every j <= {j_max} "
                              f"(last {last.sup_gap if last else float('nan'):.3g})")
                raise GridTooSmallError(f"step {n}: {detail}")

            # 1) obstacle and its region
            f_j = np.minimum(fv / j, 1.0)
            psi = s + f_j
            fixed = base | (fv > j + 1) | domain.outer_mask | domain.inner_mask
            h, report = solve_obstacle(ObstacleProblemSpec.from_obstacle(domain, p, psi, fixed), tol=tol)
            if report.status == SolveStatus.INFEASIBLE:
                raise InfeasibleObstacleError(f"step {n}, j={j}")
            converged = report.converged
            if not converged:
                logger.warning("Obstacle solve not converged: step=%d j=%d residual=%.3e", n, j, report.residual)
            ht = h.values

            # 2) invariants of the sweep
            if np.any(ht < s - 10 * tol):
                raise AssertionFailure("obstacle-majorant", f"step {n}, j={j}: h̃_j < s")
            if previous is not None and np.any(ht > previous + 10 * tol):
                raise AssertionFailure("sweep-monotonicity", f"step {n}, j={j}: h̃_j increased")
            delta = ht - s
            d_norm = gradient_norm(domain, delta, p)
            fj_norm = gradient_norm(domain, f_j, p)
            bound = 2.0 * gradient_norm(domain, s, p) + gradient_norm(domain, fv, p)
            if d_norm > bound + _slack(bound):
                raise AssertionFailure("weak-limit-bound", f"‖∇δ_j‖={d_norm:.6g} > {bound:.6g}")
            gap = float(delta[D_next].max())
            sweep.append(SweepEntry(j=j, sup_gap=gap, delta_energy=d_norm, f_energy=fj_norm, converged=converged))
            logger.debug("Sweep: step=%d j=%d gap=%.4g ‖∇δ‖=%.4g ‖∇f_j‖=%.4g", n, j, gap, d_norm, fj_norm)

            # 3) acceptance
            energy_ok = not energy_rule or n == 0 or d_norm < 2.0 ** (-n)
            if gap < gap_target and energy_ok:
                accepted = (j, ht, delta, f_j, gap, d_norm, converged)
            else:
                failing = "gap" if gap >= gap_target else "energy"
                previous = ht
                j *= 2

        j_bar, ht, delta, f_j, gap, d_norm, converged = accepted
        if np.any(ht < s - 10 * tol):
            raise AssertionFailure("run-monotonicity", f"s^({n + 1}) < s^({n})")
        record = StageRecord(
            n=n, j_bar=j_bar, sup_gap=gap, delta_energy=d_norm,
            cumulative_energy=gradient_norm(domain, ht, p),
            s_before=ScalarField(domain, s), delta=ScalarField(domain, delta),
            f_j=ScalarField(domain, f_j), s_after=ScalarField(domain, ht), sweep=sweep,
            converged=converged,
        )
        energy_chain_audit(record, p)
        stages.append(record)
        logger.info("Khas'minskii step: n=%d j_bar=%d sup_gap=%.4g ‖∇δ‖=%.4g ‖∇s‖=%.6g",
                    n, j_bar, gap, d_norm, record.cumulative_energy)
        s = ht
        j_start = max(1, j_bar)

    # 4) the final witness
    final = ScalarField(domain, s)
    if np.any(s[K] != 0) or np.any(s[outer] != steps):
        raise AssertionFailure("pinning", "𝒦 is not 0 on K and N on the outer ring")
    check = check_supersolution(domain, final, p, tol=10 * tol, exclude=base)
    if not check.passed:
        raise AssertionFailure("supersolution", f"𝒦 fails at {check.offending.size} nodes (worst {check.worst:.3e})")

    run = KhasminskiiRun(stages=stages, final=final, f=f, base=base, p=p, gap_base=gap_base,
                         energy_rule=energy_rule, f_energy=f_energy)
    if energy_rule:
        total = gradient_norm(domain, s, p)
        if total > run.energy_budget + _slack(run.energy_budget):
            raise AssertionFailure("energy-budget", f"‖∇𝒦‖_p={total:.6g} > {run.energy_budget:.6g}")
    return run


def energy_chain_audit(record: StageRecord, p: float) -> AuditReport:
    """The three norm inequalities of one induction step, each with relative slack 1e-9."""
    domain = record.s_before.domain
    s, d, fj = record.s_before.values, record.delta.values, record.f_j.values
    ns = gradient_norm(domain, s, p)
    nd = gradient_norm(domain, d, p)
    nf = gradient_norm(domain, fj, p)

    # a) s + δ/2 truncated at n is admissible for the previous step
    half = gradient_norm(domain, s + 0.5 * d, p)
    link_a = (half, ns)
    if half < ns - _slack(ns):
        raise AssertionFailure("energy-chain-a", f"‖∇(s + δ/2)‖={half!r} < ‖∇s‖={ns!r}")

    # b) minimizing property against ψ_j = s + f_j
    full = gradient_norm(domain, s + d, p)
    link_b = (full, ns + nf)
    if full > ns + nf + _slack(ns + nf):
        raise AssertionFailure("energy-chain-b", f"‖∇(s + δ)‖={full!r} > ‖∇s‖ + ‖∇f_j‖={ns + nf!r}")

    # c) uniform convexity
    link_c = None
    if ns > 0:
        v, w = _cell_vectors(domain, s), _cell_vectors(domain, d)
        star = lemma_star_check(v, w, p, domain.vol)
        sigma = sigma_function(p, nd / (ns + nd))
        link_c = (sigma, nf / ns)
        if star.status == LemmaStarStatus.HOLDS and sigma > nf / ns + _slack(nf / ns):
            raise AssertionFailure("energy-chain-c", f"σ={sigma!r} > ‖∇f_j‖/‖∇s‖={nf / ns!r}")

    return AuditReport(n=record.n, link_a=link_a, link_b=link_b, link_c=link_c, passed=True)
