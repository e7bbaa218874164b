# src/services/plaplace_solver_service.py
import logging
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from src.config import settings
from src.domain.models import (
    DiscreteDomain, ObstacleProblemSpec, ScalarField, SolveReport, SolveStatus,
    SupersolutionCheck,
)
from src.errors import ValidationError

logger = logging.getLogger(__name__)

FieldLike = Union[ScalarField, np.ndarray]

ARMIJO_C = 1e-4
MAX_LINE_SEARCH = 50


# ---------- Energy ----------

def _values(u: FieldLike) -> np.ndarray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


def _cell_gradients(domain: DiscreteDomain, u: np.ndarray) -> List[np.ndarray]:
    return [G @ u for G in domain.grad_ops]


def _sq(gs: List[np.ndarray]) -> np.ndarray:
    return sum(g * g for g in gs)


def p_energy(domain: DiscreteDomain, u: FieldLike, p: float) -> float:
    """D_p(u) = Σ_cells vol_c · |∇u|_c^p."""
    if not p > 1:
        raise ValidationError(f"p must be > 1, got {p}")
    s = _sq(_cell_gradients(domain, _values(u)))
    return float(np.sum(domain.vol * s ** (p / 2.0)))


def gradient_norm(domain: DiscreteDomain, u: FieldLike, p: float) -> float:
    """‖∇u‖_p, the weighted ℓ^p norm of the cell gradients."""
    return p_energy(domain, u, p) ** (1.0 / p)


def _regularized_energy(domain: DiscreteDomain, u: np.ndarray, p: float, eps: float) -> float:
    s = _sq(_cell_gradients(domain, u)) + eps * eps
    return float(np.sum(domain.vol * s ** (p / 2.0)))


def _weights(domain: DiscreteDomain, s: np.ndarray, p: float) -> np.ndarray:
    """p · vol · s^{(p-2)/2}, with zero-gradient cells contributing nothing."""
    if p == 2:
        return 2.0 * domain.vol
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = p * domain.vol[pos] * s[pos] ** ((p - 2.0) / 2.0)
    return out


def energy_gradient(domain: DiscreteDomain, u: FieldLike, p: float, eps: float = 0.0) -> np.ndarray:
    """∂D_p/∂u_i for the ε-regularized energy (ε = 0 gives the plain energy)."""
    vals = _values(u)
    gs = _cell_gradients(domain, vals)
    w = _weights(domain, _sq(gs) + eps * eps, p)
    return sum(G.T @ (w * g) for G, g in zip(domain.grad_ops, gs))


def _flux_scale(domain: DiscreteDomain, gs: List[np.ndarray], w: np.ndarray) -> np.ndarray:
    """Per-node sum of absolute flux contributions; the natural size of a residual."""
    return sum(abs(G).T @ np.abs(w * g) for G, g in zip(domain.grad_ops, gs))


def _hessian(domain: DiscreteDomain, u: np.ndarray, p: float, eps: float) -> sparse.csr_matrix:
    gs = _cell_gradients(domain, u)
    s = _sq(gs) + eps * eps
    w = _weights(domain, s, p)
    H = sum(G.T @ sparse.diags(w) @ G for G in domain.grad_ops)
    if p != 2:
        c = np.zeros_like(s)
        pos = s > 0
        c[pos] = p * (p - 2.0) * domain.vol[pos] * s[pos] ** ((p - 4.0) / 2.0)
        for Gk, gk in zip(domain.grad_ops, gs):
            for Gl, gl in zip(domain.grad_ops, gs):
                H = H + Gk.T @ sparse.diags(c * gk * gl) @ Gl
    return H.tocsr()


# ---------- Core minimizer ----------

def _natural_residual(u: np.ndarray, g: np.ndarray, psi: np.ndarray, free: np.ndarray) -> np.ndarray:
    uf = u[free]
    return uf - np.maximum(psi[free], uf - g[free])


def _minimize(prob: ObstacleProblemSpec, u: np.ndarray, eps: float, tol: float,
              max_iter: int) -> Tuple[np.ndarray, int, float, SolveStatus]:
    """Projected Newton on the inactive set with projected Armijo backtracking."""
    domain, p = prob.domain, prob.p
    free = ~prob.fixed
    psi = prob.obstacle
    u = u.copy()
    energy = _regularized_energy(domain, u, p, eps)
    residual = np.inf

    for it in range(max_iter + 1):
        gs = _cell_gradients(domain, u)
        w = _weights(domain, _sq(gs) + eps * eps, p)
        g = sum(G.T @ (w * gk) for G, gk in zip(domain.grad_ops, gs))
        scale = max(1.0, float(np.max(_flux_scale(domain, gs, w)[free], initial=0.0)))
        res_vec = _natural_residual(u, g, psi, free)
        residual = float(np.max(np.abs(res_vec), initial=0.0)) / scale
        if residual <= tol:
            return u, it, residual, SolveStatus.CONVERGED
        if it == max_iter:
            break

        # 1) active set: free nodes sitting on the obstacle and pushed into it
        with np.errstate(invalid="ignore"):
            on_psi = np.isfinite(psi) & (u - psi <= 1e-12 * (1.0 + np.abs(psi)))
        active = free & on_psi & (g > 0)
        inactive = free & ~active
        idx = np.flatnonzero(inactive)

        # 2) Newton direction on the inactive set
        d = np.zeros_like(u)
        H = _hessian(domain, u, p, eps)
        if idx.size:
            H_ii = H[idx][:, idx]
            diag = H_ii.diagonal()
            shift = 1e-14 * float(np.max(np.abs(diag), initial=1.0))
            with np.errstate(all="ignore"):
                step = spsolve((H_ii + shift * sparse.identity(idx.size, format="csr")).tocsc(), -g[idx])
            if not np.all(np.isfinite(step)) or float(step @ g[idx]) >= 0:
                # Jacobi-scaled steepest descent
                step = -g[idx] / np.where(diag > 0, diag, 1.0)
            d[idx] = step
        else:
            break

        # 3) projected Armijo backtracking
        alpha = 1.0
        accepted = False
        for _ in range(MAX_LINE_SEARCH):
            trial = u + alpha * d
            trial[free] = np.maximum(psi[free], trial[free])
            e_trial = _regularized_energy(domain, trial, p, eps)
            decrease = float(g[free] @ (trial[free] - u[free]))
            if e_trial <= energy + ARMIJO_C * decrease + 1e-13 * abs(energy):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            logger.warning("Line search stalled: it=%d residual=%.3e eps=%.1e", it, residual, eps)
            break
        moved = float(np.max(np.abs(trial - u), initial=0.0))
        u, energy = trial, e_trial
        if moved <= 1e-15 * max(1.0, float(np.max(np.abs(u)))):
            logger.warning("Iterate stalled at roundoff: it=%d residual=%.3e", it, residual)
            break

    return u, it, residual, SolveStatus.MAX_ITER


def _eps_schedule(p: float) -> List[float]:
    if p == 2:
        return [0.0]
    out, eps = [], settings.EPS_START
    while eps > settings.EPS_END * (1 + 1e-9):
        out.append(eps)
        eps *= settings.EPS_FACTOR
    out.append(settings.EPS_END)
    return out


def _linear_dirichlet(domain: DiscreteDomain, theta: np.ndarray, fixed: np.ndarray) -> np.ndarray:
    """p = 2 solution: one sparse solve of the weighted graph Laplacian."""
    u = np.where(fixed, theta, 0.0).astype(float)
    free = np.flatnonzero(~fixed)
    if free.size == 0:
        return u
    S = domain.stacked_grad
    L = (S.T @ sparse.diags(np.tile(domain.vol, len(domain.grad_ops))) @ S).tocsr()
    bnd = np.flatnonzero(fixed)
    rhs = -(L[free][:, bnd] @ u[bnd])
    u[free] = spsolve(L[free][:, free].tocsc(), rhs)
    return u


def _solve(prob: ObstacleProblemSpec, tol: float, initial: Optional[np.ndarray],
           max_iter: Optional[int]) -> Tuple[ScalarField, SolveReport]:
    domain, p = prob.domain, prob.p
    fixed, psi, theta = prob.fixed, prob.obstacle, prob.theta
    max_iter = max_iter or settings.MAX_ITER

    if not prob.feasible:
        bad = np.flatnonzero(fixed & (theta < psi))
        logger.warning("Infeasible obstacle problem: %d boundary nodes below the obstacle", bad.size)
        u = np.where(fixed, theta, np.where(np.isfinite(psi), psi, 0.0))
        report = SolveReport(status=SolveStatus.INFEASIBLE, iterations=0,
                             energy=p_energy(domain, u, p), residual=float("inf"), epsilon=0.0)
        return ScalarField(domain, u), report

    # 1) starting iterate
    if initial is not None:
        u = np.asarray(initial, dtype=float).copy()
        u[fixed] = theta[fixed]
    else:
        u = _linear_dirichlet(domain, theta, fixed)
    u[~fixed] = np.maximum(psi[~fixed], u[~fixed])

    # 2) ε continuation; intermediate stages need not be tight
    schedule = _eps_schedule(p)
    total_iter = 0
    status, residual = SolveStatus.MAX_ITER, np.inf
    for k, eps in enumerate(schedule):
        stage_tol = tol if k == len(schedule) - 1 else max(tol, 1e-6)
        u, its, residual, status = _minimize(prob, u, eps, stage_tol, max_iter)
        total_iter += its

    report = SolveReport(status=status, iterations=total_iter, energy=p_energy(domain, u, p),
                         residual=residual, epsilon=schedule[-1])
    if status != SolveStatus.CONVERGED:
        logger.warning("Solve did not converge: p=%s iterations=%d residual=%.3e tol=%.1e",
                       p, total_iter, residual, tol)
    else:
        logger.debug("Solve converged: p=%s iterations=%d residual=%.3e", p, total_iter, residual)
    return ScalarField(domain, u), report


# ---------- Public operations ----------

def default_fixed(domain: DiscreteDomain) -> np.ndarray:
    return domain.inner_mask | domain.outer_mask


def solve_dirichlet(domain: DiscreteDomain, theta: FieldLike, p: float, tol: Optional[float] = None,
                    fixed: Optional[np.ndarray] = None, initial: Optional[np.ndarray] = None,
                    max_iter: Optional[int] = None) -> Tuple[ScalarField, SolveReport]:
    """Minimize D_p over fields equal to theta on the fixed nodes (tagged nodes by default)."""
    fixed = default_fixed(domain) if fixed is None else np.asarray(fixed, dtype=bool)
    if not fixed.any():
        raise ValidationError("Dirichlet problem needs at least one fixed node")
    vals = np.where(fixed, _values(theta), 0.0)
    prob = ObstacleProblemSpec(domain=domain, p=p, obstacle=np.full(domain.n_nodes, -np.inf),
                               theta=vals, fixed=fixed)
    return _solve(prob, tol or settings.SOLVER_TOL, initial, max_iter)


def solve_obstacle(spec: ObstacleProblemSpec, tol: Optional[float] = None,
                   initial: Optional[np.ndarray] = None,
                   max_iter: Optional[int] = None) -> Tuple[ScalarField, SolveReport]:
    """Minimize D_p over {u ≥ ψ on free nodes, u = θ on fixed nodes}; reports the contact set."""
    tol = tol or settings.SOLVER_TOL
    u, report = _solve(spec, tol, initial, max_iter)
    if report.status == SolveStatus.INFEASIBLE:
        return u, report
    free = ~spec.fixed
    contact = free & (u.values - spec.obstacle <= 10 * tol)
    report.contact = contact
    lap, scale = _weak_laplacian(spec.domain, u.values, spec.p)
    rest = free & ~contact
    report.noncontact_residual = float(np.max(np.abs(lap[rest]), initial=0.0)) / scale
    logger.debug("Obstacle solve: contact=%d noncontact_residual=%.3e", int(contact.sum()),
                 report.noncontact_residual)
    return u, report


def _weak_laplacian(domain: DiscreteDomain, u: np.ndarray, p: float) -> Tuple[np.ndarray, float]:
    """R_i = Σ vol |∇u|^{p-2} ⟨∇u, ∇φ_i⟩ and the flux scale used for tolerances."""
    gs = _cell_gradients(domain, u)
    w = _weights(domain, _sq(gs), p)
    lap = sum(G.T @ (w * g) for G, g in zip(domain.grad_ops, gs)) / p
    scale = max(1.0, float(np.max(_flux_scale(domain, gs, w), initial=0.0)) / p)
    return lap, scale


def _interior(domain: DiscreteDomain, exclude: Optional[np.ndarray]) -> np.ndarray:
    mask = ~default_fixed(domain)
    if exclude is not None:
        mask &= ~np.asarray(exclude, dtype=bool)
    return mask


def check_supersolution(domain: DiscreteDomain, u: FieldLike, p: float, tol: Optional[float] = None,
                        exclude: Optional[np.ndarray] = None) -> SupersolutionCheck:
    """Δ_p u ≤ 0 tested against interior hat functions: R_i ≥ -tol (relative to the flux scale)."""
    tol = tol or 10 * settings.SOLVER_TOL
    lap, scale = _weak_laplacian(domain, _values(u), p)
    interior = _interior(domain, exclude)
    bad = interior & (lap < -tol * scale)
    worst = float(np.min(lap[interior], initial=0.0)) / scale
    return SupersolutionCheck(passed=not bad.any(), offending=np.flatnonzero(bad), worst=worst)


def check_subsolution(domain: DiscreteDomain, u: FieldLike, p: float, tol: Optional[float] = None,
                      exclude: Optional[np.ndarray] = None) -> SupersolutionCheck:
    """Mirror of check_supersolution: R_i ≤ tol."""
    tol = tol or 10 * settings.SOLVER_TOL
    lap, scale = _weak_laplacian(domain, _values(u), p)
    interior = _interior(domain, exclude)
    bad = interior & (lap > tol * scale)
    worst = float(np.max(lap[interior], initial=0.0)) / scale
    return SupersolutionCheck(passed=not bad.any(), offending=np.flatnonzero(bad), worst=worst)
