# src/commands/model.py
import logging
from typing import Any, Dict, Tuple

from src.dependencies import RunContext
from src.domain.models import Parabolicity
from src.domain.schemas import ExperimentConfig, ParabolicityOut
from src.infrastructure.artifacts import write_csv
from src.services.model_manifold_service import classify_parabolicity, radial_evans

from .common import manifold_from

logger = logging.getLogger(__name__)


def run_classify(config: ExperimentConfig, ctx: RunContext) -> Tuple[str, Dict[str, Any]]:
    m = manifold_from(config)
    report = classify_parabolicity(m, config.p, quad_tol=config.quad_tol)
    result: Dict[str, Any] = {"parabolicity": ParabolicityOut.model_validate(report).model_dump(mode="json")}

    # parabolic models also get their radial Evans identities checked
    if report.status == Parabolicity.PARABOLIC and config.t_list:
        evans = radial_evans(m, config.p, config.t_list, quad_tol=config.quad_tol)
        rows = [(c.t, c.radius, c.energy, c.energy_expected, c.capacity, c.capacity_expected)
                for c in evans.checks]
        write_csv(ctx.out_dir / "radial_evans.csv",
                  ["t", "radius", "energy", "energy_expected", "capacity", "capacity_expected"], rows)
        write_csv(ctx.out_dir / "profile.csv", ["r", "f"], zip(evans.profile.grid, evans.profile.values))
        result["evans_levels"] = [c.t for c in evans.checks]

    logger.info("Classify finished: manifold=%s p=%s status=%s", config.manifold, config.p, report.status.value)
    return report.status.value, result
