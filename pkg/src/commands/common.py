# src/commands/common.py
import math

import numpy as np

from src.domain.models import DiscreteDomain, ModelManifold
from src.domain.schemas import ExperimentConfig
from src.errors import ConfigError
from src.services.discrete_domain_service import build_radial_grid, build_surface_grid
from src.services.model_manifold_service import parse_manifold


def manifold_from(config: ExperimentConfig) -> ModelManifold:
    return parse_manifold(config.manifold)


def radial_domain_from(config: ExperimentConfig, m: ModelManifold) -> DiscreteDomain:
    return build_radial_grid(m, config.p, config.rmax, config.grid,
                             grading=config.grading_value(), r_min=config.rmin)


def surface_domain_from(config: ExperimentConfig, m: ModelManifold) -> DiscreteDomain:
    return build_surface_grid(m, config.rmax, config.grid, config.grid_theta,
                              grading=config.grading_value(), r_min=config.rmin)


def condenser_from(config: ExperimentConfig, domain: DiscreteDomain) -> np.ndarray:
    """'inner': the whole inner ring; 'half-arc': inner-ring nodes with θ < π."""
    inner = domain.inner_mask
    if config.condenser == "inner":
        return inner.copy()
    if config.condenser == "half-arc":
        if domain.theta is None:
            raise ConfigError("half-arc condenser needs a surface grid")
        return inner & (domain.theta < math.pi)
    raise ConfigError(f"unknown condenser {config.condenser!r} (use inner or half-arc)")
