# src/services/convexity_service.py
import logging
from typing import Optional

import numpy as np

from src.domain.models import LemmaStarResult, LemmaStarStatus, SuiteSummary
from src.errors import AssertionFailure, ValidationError

logger = logging.getLogger(__name__)

LEMMA_SLACK = 1e-12
DEFAULT_CHUNK = 20_000


def clarkson_modulus(p: float, eps):
    """Lower bound for the modulus of convexity of any L^p space, valid for ε ∈ [0, 2].

    p ≥ 2: Clarkson, 1 - (1 - (ε/2)^p)^{1/p}.
    1 < p < 2: (p-1)ε²/8, capped at the Hilbert value 1 - sqrt(1 - ε²/4).
    """
    if not p > 1:
        raise ValidationError(f"p must be > 1, got {p}")
    e = np.asarray(eps, dtype=float)
    if np.any(e < 0) or np.any(e > 2):
        raise ValidationError("ε must lie in [0, 2]")
    if p >= 2:
        out = 1.0 - (1.0 - (e / 2.0) ** p) ** (1.0 / p)
    else:
        out = np.minimum((p - 1.0) * e * e / 8.0, 1.0 - np.sqrt(1.0 - e * e / 4.0))
    return float(out) if out.ndim == 0 else out


def sigma_function(p: float, x):
    """σ(x) = 1/(1 - δ(x)) - 1 on [0, 1); x = ‖w‖ / (‖v‖ + ‖w‖) reaches 1 only when v = 0."""
    xs = np.asarray(x, dtype=float)
    if np.any(xs < 0) or np.any(xs >= 1):
        raise ValidationError("σ is defined on [0, 1)")
    out = 1.0 / (1.0 - clarkson_modulus(p, xs)) - 1.0
    return float(out) if np.ndim(out) == 0 else out


def weighted_norm(v: np.ndarray, p: float, weights: np.ndarray) -> float:
    """(Σ_c weights_c |v_c|^p)^{1/p}; v is (cells,) or (cells, k) with Euclidean |v_c|."""
    return float(_norm(_as_cells(v), p, np.asarray(weights, dtype=float)))


def _as_cells(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def lemma_star_check(v: np.ndarray, w: np.ndarray, p: float, weights: np.ndarray) -> LemmaStarResult:
    """If ‖v + w/2‖ ≥ ‖v‖ then ‖v + w‖ ≥ ‖v‖ (1 + σ(‖w‖ / (‖v‖ + ‖w‖)))."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise ValidationError("weights must be positive")
    v, w = _as_cells(v), _as_cells(w)
    nv = float(_norm(v, p, weights))
    nw = float(_norm(w, p, weights))
    lhs = float(_norm(v + w, p, weights))

    if float(_norm(v + 0.5 * w, p, weights)) < nv:
        return LemmaStarResult(status=LemmaStarStatus.HYPOTHESIS_NOT_MET, lhs=lhs, rhs=nv, sigma=0.0)
    if nv == 0.0:
        return LemmaStarResult(status=LemmaStarStatus.HOLDS, lhs=lhs, rhs=0.0, sigma=0.0)

    sigma = sigma_function(p, nw / (nv + nw))
    rhs = nv * (1.0 + sigma)
    if lhs < rhs - LEMMA_SLACK * max(1.0, rhs):
        raise AssertionFailure("lemma-star", f"‖v+w‖={lhs!r} < ‖v‖(1+σ)={rhs!r} at p={p}")
    return LemmaStarResult(status=LemmaStarStatus.HOLDS, lhs=lhs, rhs=rhs, sigma=sigma)


def _norm(v: np.ndarray, p: float, weights: np.ndarray) -> np.ndarray:
    """Weighted ℓ^p norm over the cell axis of (..., cells, k) arrays."""
    pointwise = np.sqrt(np.sum(v * v, axis=-1))
    return np.sum(weights * pointwise ** p, axis=-1) ** (1.0 / p)


# ---------- Randomized suites ----------

def _random_pairs(rng: np.random.Generator, size: int, cells: int, k: int):
    v = rng.standard_normal((size, cells, k))
    # mix w toward ±v so both sides of the hypothesis are well sampled
    mix = rng.uniform(-1.5, 1.5, size=(size, 1, 1))
    w = mix * v + rng.uniform(0.0, 1.5, size=(size, 1, 1)) * rng.standard_normal((size, cells, k))
    weights = rng.uniform(0.1, 2.0, size=(size, cells))
    return v, w, weights


def lemma_star_suite(p: float, trials: int, rng: np.random.Generator, cells: int = 8, k: int = 2,
                     chunk: int = DEFAULT_CHUNK) -> SuiteSummary:
    """Randomized weighted ℓ^p pairs; counts σ-inequality violations where the hypothesis holds."""
    met = violations = 0
    worst = np.inf
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        v, w, weights = _random_pairs(rng, size, cells, k)
        nv = _norm(v, p, weights)
        nw = _norm(w, p, weights)
        hyp = (_norm(v + 0.5 * w, p, weights) >= nv) & (nv > 0)
        if hyp.any():
            x = nw[hyp] / (nv[hyp] + nw[hyp])
            rhs = nv[hyp] * (1.0 + sigma_function(p, x))
            margin = _norm(v[hyp] + w[hyp], p, weights[hyp]) - rhs
            violations += int(np.sum(margin < -LEMMA_SLACK * np.maximum(1.0, rhs)))
            worst = min(worst, float(margin.min()))
            met += int(hyp.sum())
        done += size
    logger.info("Lemma-star suite: p=%s trials=%d met=%d violations=%d worst_margin=%.3e",
                p, trials, met, violations, worst)
    return SuiteSummary(p=p, trials=trials, hypothesis_met=met, violations=violations, worst_margin=worst)


def delta_lower_suite(p: float, trials: int, rng: np.random.Generator, cells: int = 8, k: int = 1,
                      chunk: int = DEFAULT_CHUNK) -> SuiteSummary:
    """Random unit pairs: 1 - ‖(x+y)/2‖ ≥ δ(‖x - y‖) - 1e-12."""
    violations = 0
    worst = np.inf
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        weights = rng.uniform(0.1, 2.0, size=(size, cells))
        x = rng.standard_normal((size, cells, k))
        y = x + rng.uniform(0.0, 2.0, size=(size, 1, 1)) * rng.standard_normal((size, cells, k))
        x /= _norm(x, p, weights)[:, None, None]
        y /= _norm(y, p, weights)[:, None, None]
        eps = np.clip(_norm(x - y, p, weights), 0.0, 2.0)
        margin = (1.0 - _norm(0.5 * (x + y), p, weights)) - clarkson_modulus(p, eps)
        violations += int(np.sum(margin < -LEMMA_SLACK))
        worst = min(worst, float(margin.min()))
        done += size
    logger.info("Modulus suite: p=%s trials=%d violations=%d worst_margin=%.3e", p, trials, violations, worst)
    return SuiteSummary(p=p, trials=trials, hypothesis_met=trials, violations=violations, worst_margin=worst)


def empirical_modulus(p: float, eps: float, rng: np.random.Generator, trials: int = 50_000,
                      cells: int = 4, weights: Optional[np.ndarray] = None) -> float:
    """Sampled upper estimate of the modulus: min of 1 - ‖(x+y)/2‖ over unit pairs with ‖x - y‖ ≥ ε."""
    w = np.ones(cells) if weights is None else np.asarray(weights, dtype=float)
    x = rng.standard_normal((trials, cells, 1))
    y = rng.standard_normal((trials, cells, 1))
    x /= _norm(x, p, w)[:, None, None]
    y /= _norm(y, p, w)[:, None, None]
    ok = _norm(x - y, p, w) >= eps
    if not ok.any():
        return float("nan")
    return float(np.min(1.0 - _norm(0.5 * (x[ok] + y[ok]), p, w)))
