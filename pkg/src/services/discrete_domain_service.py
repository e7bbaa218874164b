# src/services/discrete_domain_service.py
import logging
import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse

from src.config import settings
from src.domain.models import (
    DiscreteDomain, DomainKind, Exhaustion, ModelManifold, NodeTag, ScalarField,
)
from src.errors import (
    InvalidRangeError, UnsupportedDimensionError, ValidationError,
)

logger = logging.getLogger(__name__)


# ---------- Helpers ----------

def log_grading_ratio(r0: float, r_max: float, M: int) -> float:
    """Ratio q that makes the graded nodes log-spaced: r_i = r0 · q^i."""
    return (r_max / r0) ** (1.0 / M)


def graded_nodes(r0: float, r_max: float, M: int, ratio: float = 1.0) -> np.ndarray:
    """M+1 nodes on [r0, r_max] with Δr_{i+1} = ratio · Δr_i."""
    if ratio <= 0:
        raise ValidationError(f"grading ratio must be > 0, got {ratio}")
    if math.isclose(ratio, 1.0):
        r = np.linspace(r0, r_max, M + 1)
    else:
        k = np.arange(M + 1, dtype=float)
        # expm1 keeps small geometric steps accurate when ratio is close to 1
        frac = np.expm1(k * math.log(ratio)) / math.expm1(M * math.log(ratio))
        r = r0 + (r_max - r0) * frac
    r[0], r[-1] = r0, r_max
    if np.any(np.diff(r) <= 0):
        raise ValidationError("graded nodes are not strictly increasing (ratio too extreme)")
    return r


def _difference_matrix(n_cells: int, coeff: np.ndarray) -> sparse.csr_matrix:
    rows = np.repeat(np.arange(n_cells), 2)
    cols = np.stack([np.arange(n_cells), np.arange(n_cells) + 1], axis=1).ravel()
    data = np.stack([-coeff, coeff], axis=1).ravel()
    return sparse.csr_matrix((data, (rows, cols)), shape=(n_cells, n_cells + 1))


def _resolve_ratio(grading, r0: float, r_max: float, M: int) -> float:
    if grading is None:
        return settings.GRADING_RATIO
    if isinstance(grading, str):
        if grading.lower() != "log":
            raise ValidationError(f"unknown grading {grading!r} (use a ratio or 'log')")
        return log_grading_ratio(r0, r_max, M)
    return float(grading)


# ---------- Builders ----------

def build_radial_grid(m: ModelManifold, p_hint: float, r_max: float, M: int,
                      grading=None, r_min: Optional[float] = None) -> DiscreteDomain:
    """Radial arena on [r̄, r_max]: cell i has gradient coefficient 1/Δr_i and
    volume ω_{n-1} · A(r_mid) · Δr_i. Node 0 is inner, node M is outer."""
    r0 = m.base_radius if r_min is None else float(r_min)
    if not r_max > r0:
        raise InvalidRangeError(f"r_max={r_max} must exceed the inner radius {r0}")
    if M < 1:
        raise ValidationError(f"need at least one cell, got M={M}")
    if not p_hint > 1:
        raise ValidationError(f"p must be > 1, got {p_hint}")

    r = graded_nodes(r0, r_max, M, _resolve_ratio(grading, r0, r_max, M))
    dr = np.diff(r)
    mid = 0.5 * (r[:-1] + r[1:])
    vol = m.omega * m.area(mid) * dr

    tags = np.full(M + 1, NodeTag.NONE, dtype=np.int8)
    tags[0], tags[-1] = NodeTag.INNER, NodeTag.OUTER

    logger.debug("Radial grid: source=%s M=%d r=[%s, %s] p_hint=%s", m.source, M, r0, r_max, p_hint)
    return DiscreteDomain(
        kind=DomainKind.RADIAL1D,
        coords=r[:, None],
        shape=(M + 1,),
        grad_ops=(_difference_matrix(M, 1.0 / dr),),
        vol=vol,
        tags=tags,
        omega=m.omega,
        manifold=m,
    )


def build_segment_grid(x0: float, x1: float, M: int) -> DiscreteDomain:
    """Flat segment [x0, x1] (A ≡ 1, unit weight); both ends are tagged."""
    if not x1 > x0:
        raise InvalidRangeError(f"segment needs x0 < x1, got {x0}, {x1}")
    x = np.linspace(x0, x1, M + 1)
    dx = np.diff(x)
    tags = np.full(M + 1, NodeTag.NONE, dtype=np.int8)
    tags[0], tags[-1] = NodeTag.INNER, NodeTag.OUTER
    return DiscreteDomain(
        kind=DomainKind.RADIAL1D, coords=x[:, None], shape=(M + 1,),
        grad_ops=(_difference_matrix(M, 1.0 / dx),), vol=dx.copy(), tags=tags, omega=1.0,
    )


def build_surface_grid(m: ModelManifold, r_max: float, M_r: int, M_theta: int,
                       grading=None, r_min: Optional[float] = None) -> DiscreteDomain:
    """Tensor (r, θ) arena on a surface of revolution, periodic in θ.

    Node (i, j) has index i·M_θ + j. Cell (i, j) carries
      D_r u = (u[i+1,j] - u[i,j]) / Δr_i
      D_θ u = (u[i,j+1] - u[i,j]) / (Δθ · A(r_mid_i))
    and volume A(r_mid_i) · Δr_i · Δθ, so axisymmetric data see exactly the
    radial grid's energy.
    """
    if m.dimension != 2:
        raise UnsupportedDimensionError(f"surface grids need n=2, got n={m.dimension}")
    if M_theta < 8 or M_theta % 2:
        raise ValidationError(f"angular resolution must be even and >= 8, got {M_theta}")
    r0 = m.base_radius if r_min is None else float(r_min)
    if not r_max > r0:
        raise InvalidRangeError(f"r_max={r_max} must exceed the inner radius {r0}")
    if M_r < 1:
        raise ValidationError(f"need at least one radial cell, got M_r={M_r}")

    r = graded_nodes(r0, r_max, M_r, _resolve_ratio(grading, r0, r_max, M_r))
    dr = np.diff(r)
    a_mid = m.area(0.5 * (r[:-1] + r[1:]))
    dtheta = 2.0 * math.pi / M_theta
    theta = dtheta * np.arange(M_theta)

    # 1) cell and node bookkeeping
    ii, jj = np.meshgrid(np.arange(M_r), np.arange(M_theta), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    n_cells = ii.size
    n_nodes = (M_r + 1) * M_theta
    here = ii * M_theta + jj
    up = (ii + 1) * M_theta + jj
    side = ii * M_theta + (jj + 1) % M_theta
    cells = np.arange(n_cells)

    # 2) gradient operators
    cr = 1.0 / dr[ii]
    g_r = sparse.csr_matrix(
        (np.concatenate([-cr, cr]), (np.concatenate([cells, cells]), np.concatenate([here, up]))),
        shape=(n_cells, n_nodes),
    )
    ct = 1.0 / (dtheta * a_mid[ii])
    g_t = sparse.csr_matrix(
        (np.concatenate([-ct, ct]), (np.concatenate([cells, cells]), np.concatenate([here, side]))),
        shape=(n_cells, n_nodes),
    )

    # 3) volumes and tags
    vol = a_mid[ii] * dr[ii] * dtheta
    rr, tt = np.meshgrid(r, theta, indexing="ij")
    tags = np.full(n_nodes, NodeTag.NONE, dtype=np.int8)
    tags[:M_theta] = NodeTag.INNER
    tags[-M_theta:] = NodeTag.OUTER

    logger.debug("Surface grid: source=%s M_r=%d M_theta=%d r=[%s, %s]", m.source, M_r, M_theta, r0, r_max)
    return DiscreteDomain(
        kind=DomainKind.SURFACE2D,
        coords=np.stack([rr.ravel(), tt.ravel()], axis=1),
        shape=(M_r + 1, M_theta),
        grad_ops=(g_r, g_t),
        vol=vol,
        tags=tags,
        omega=m.omega,
        theta_periodic=True,
        manifold=m,
    )


# ---------- Fields and regions ----------

def field_from_radial(domain: DiscreteDomain, func: Callable[[np.ndarray], np.ndarray]) -> ScalarField:
    """Sample a radial function at every node."""
    return ScalarField(domain, np.asarray(func(domain.radii), dtype=float))


def sublevel_region(u: ScalarField, t: float, strict: bool = False) -> np.ndarray:
    return u.values < t if strict else u.values <= t


def ring_radii(domain: DiscreteDomain) -> np.ndarray:
    return np.unique(domain.radii)


def ring_mask(domain: DiscreteDomain, r: float) -> np.ndarray:
    """Nodes on the ring nearest to radius r."""
    rings = ring_radii(domain)
    nearest = rings[np.argmin(np.abs(rings - r))]
    return domain.radii == nearest


def discrete_radial_potential(domain: DiscreteDomain, p: float, r_bar: Optional[float] = None) -> np.ndarray:
    """Midpoint-rule E_{r̄}: Σ Δr_k · A(r_mid_k)^{-1/(p-1)} over rings between r̄ and r; 0 inside r̄.

    On the grids built here this is discretely p-harmonic off {r ≤ r̄}: the
    flux through every ring equals ω exactly.
    """
    m = domain.manifold
    if m is None:
        raise ValidationError("domain has no model manifold")
    r_bar = m.base_radius if r_bar is None else r_bar
    rings = ring_radii(domain)
    k0 = int(np.argmin(np.abs(rings - r_bar)))
    if not math.isclose(rings[k0], r_bar, rel_tol=1e-8, abs_tol=1e-12):
        raise InvalidRangeError(f"r̄={r_bar} is not a ring of the grid")
    dr = np.diff(rings)
    steps = dr * m.area(0.5 * (rings[:-1] + rings[1:])) ** (-1.0 / (p - 1.0))
    steps[:k0] = 0.0
    per_ring = np.concatenate([[0.0], np.cumsum(steps)])
    return per_ring[np.searchsorted(rings, domain.radii)]


# ---------- Exhaustions ----------

def _check_exhaustion(domain: DiscreteDomain, levels: Sequence[np.ndarray]) -> Exhaustion:
    levels = [np.asarray(d, dtype=bool) for d in levels]
    if not levels[-1].all():
        levels.append(np.ones(domain.n_nodes, dtype=bool))
    for a, b in zip(levels[:-1], levels[1:]):
        if np.any(a & ~b) or a.sum() >= b.sum():
            raise ValidationError("exhaustion levels must be strictly nested")
    if not np.all(levels[0][domain.inner_mask]):
        raise ValidationError("D_0 must contain the inner boundary")
    return Exhaustion(levels=tuple(levels))


def radial_exhaustion(domain: DiscreteDomain, radii: Sequence[float]) -> Exhaustion:
    """D_k = {r ≤ radii[k]}, closed by the full node set."""
    r = domain.radii
    return _check_exhaustion(domain, [r <= rk * (1 + 1e-12) for rk in sorted(radii)])


def sublevel_exhaustion(u: ScalarField, levels: Sequence[float]) -> Exhaustion:
    """D_k = {u ≤ levels[k]}, closed by the full node set."""
    return _check_exhaustion(u.domain, [sublevel_region(u, t) for t in sorted(levels)])
