# src/commands/potential.py
import logging
from typing import Any, Dict, Tuple

from src.dependencies import RunContext
from src.domain.schemas import (
    CapacityOut, CapacityRowOut, ExperimentConfig, ScalingRowOut, SolveReportOut,
)
from src.infrastructure.artifacts import write_csv, write_node_table
from src.services.capacity_service import capacity, capacity_decay, sublevel_scaling_check
from src.services.discrete_domain_service import radial_exhaustion
from src.services.model_manifold_service import annulus_capacity

from .common import condenser_from, manifold_from, radial_domain_from

logger = logging.getLogger(__name__)


def run_capacity(config: ExperimentConfig, ctx: RunContext) -> Tuple[str, Dict[str, Any]]:
    m = manifold_from(config)
    domain = radial_domain_from(config, m)
    K = condenser_from(config, domain)
    res = capacity(domain, K, config.p, tol=config.tol)

    r0 = domain.r_min
    predicted = None
    if r0 >= m.base_radius:
        predicted = annulus_capacity(m, config.p, r0, config.rmax, config.quad_tol)
    out = CapacityOut(value=res.value, predicted=predicted,
                      report=SolveReportOut.model_validate(res.report))

    if config.levels:
        decay = capacity_decay(domain, K, radial_exhaustion(domain, config.levels), config.p, tol=config.tol)
        out.rows = [CapacityRowOut.model_validate(r) for r in decay.rows]
        out.limit, out.limit_converged = decay.limit, decay.limit_converged
    else:
        out.rows = [CapacityRowOut(n=0, r_max=domain.r_max, capacity=res.value, predicted=predicted)]

    write_csv(ctx.out_dir / "decay.csv", ["n", "r_max", "capacity", "predicted"],
              [(r.n, r.r_max, r.capacity, r.predicted) for r in out.rows])
    write_node_table(ctx.out_dir / "potential.csv", domain, {"value": res.potential.values})
    logger.info("Capacity finished: manifold=%s p=%s value=%.10g predicted=%s",
                config.manifold, config.p, res.value, predicted)
    return repr(res.value), {"capacity": out.model_dump(mode="json")}


def run_scaling(config: ExperimentConfig, ctx: RunContext) -> Tuple[str, Dict[str, Any]]:
    m = manifold_from(config)
    domain = radial_domain_from(config, m)
    res = capacity(domain, condenser_from(config, domain), config.p, tol=config.tol)

    rows = [sublevel_scaling_check(res, t, s, config.p, tol=config.tol) for t, s in config.scaling_pairs]
    write_csv(ctx.out_dir / "scaling.csv", ["t", "s", "measured", "predicted", "ratio", "band"],
              [(r.t, r.s, r.measured, r.predicted, r.ratio, r.band) for r in rows])
    worst = max(abs(r.ratio - 1.0) for r in rows)
    logger.info("Scaling finished: pairs=%d worst=%.3e", len(rows), worst)
    return f"max |ratio - 1| = {worst!r}", {
        "capacity": res.value,
        "scaling": [ScalingRowOut.model_validate(r).model_dump(mode="json") for r in rows],
    }
