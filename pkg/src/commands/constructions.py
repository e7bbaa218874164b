# src/commands/constructions.py
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from src.dependencies import RunContext, load_experiment_config
from src.domain.models import ScalarField, StageRecord
from src.domain.schemas import (
    AsymptoticsRowOut, AuditOut, EvansLevelOut, ExperimentConfig, KhasminskiiRunOut,
    KhasminskiiStepOut,
)
from src.errors import ConfigError
from src.infrastructure.artifacts import read_node_table, write_csv, write_node_table
from src.services.evans_service import capacity_asymptotics, evans_iterate
from src.services.khasminskii_service import (
    energy_chain_audit, log_level_function, reverse_khasminskii,
)

from .common import condenser_from, manifold_from, radial_domain_from, surface_domain_from

logger = logging.getLogger(__name__)

STAGE_COLUMNS = ("s_before", "delta", "f_j")


# ---------- Khas'minskii ----------

def run_khasminskii(config: ExperimentConfig, ctx: RunContext) -> Tuple[str, Dict[str, Any]]:
    m = manifold_from(config)
    domain = radial_domain_from(config, m)
    K = condenser_from(config, domain)
    f = log_level_function(domain, K) if config.exhaustion == "log" else None
    run = reverse_khasminskii(domain, K, config.p, config.steps, f=f, gap_base=config.gap_base,
                              energy_rule=config.energy_rule, tol=config.tol)

    transcript = KhasminskiiRunOut(
        p=run.p, gap_base=run.gap_base, energy_rule=run.energy_rule, exhaustion=config.exhaustion,
        f_energy=run.f_energy, energy_budget=run.energy_budget,
        steps=[KhasminskiiStepOut.model_validate(s) for s in run.stages],
    )
    write_node_table(ctx.out_dir / "final.csv", domain, {"value": run.final.values})
    columns: Dict[str, np.ndarray] = {}
    for stage in run.stages:
        for name in STAGE_COLUMNS:
            columns[f"{name}_{stage.n}"] = getattr(stage, name).values
    write_node_table(ctx.out_dir / "stages.csv", domain, columns)
    write_csv(ctx.out_dir / "sweep.csv", ["n", "j", "sup_gap", "delta_energy", "f_energy", "converged"],
              [(s.n, e.j, e.sup_gap, e.delta_energy, e.f_energy, e.converged)
               for s in run.stages for e in s.sweep])

    j_bars = ",".join(str(s.j_bar) for s in run.stages)
    logger.info("Khasminskii finished: steps=%d j_bar=%s", config.steps, j_bars)
    return j_bars, {"khasminskii": transcript.model_dump(mode="json")}


def _load_run(run_dir: Path) -> Tuple[ExperimentConfig, Dict[str, Any]]:
    try:
        report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read run report in {run_dir}: {e}")
    if report.get("command") != "khasminskii" or report.get("status") != "ok":
        raise ConfigError(f"{run_dir} is not a successful khasminskii run")
    config = load_experiment_config(None, {k: v for k, v in report["config"].items() if k != "out"})
    return config, report


def run_audit(config: ExperimentConfig, ctx: RunContext) -> Tuple[str, Dict[str, Any]]:
    if not config.run:
        raise ConfigError("audit needs --run pointing at a khasminskii output directory")
    run_dir = Path(config.run)
    run_config, report = _load_run(run_dir)
    domain = radial_domain_from(run_config, manifold_from(run_config))
    table = read_node_table(run_dir / "stages.csv")
    if table["index"].size != domain.n_nodes:
        raise ConfigError(f"stages.csv has {table['index'].size} nodes, grid has {domain.n_nodes}")

    audits: List[AuditOut] = []
    for step in report["result"]["khasminskii"]["steps"]:
        n = step["n"]
        try:
            s, d, fj = (table[f"{name}_{n}"] for name in STAGE_COLUMNS)
        except KeyError:
            raise ConfigError(f"stages.csv has no columns for step {n}")
        record = StageRecord(
            n=n, j_bar=step["j_bar"], sup_gap=step["sup_gap"], delta_energy=step["delta_energy"],
            cumulative_energy=step["cumulative_energy"], s_before=ScalarField(domain, s),
            delta=ScalarField(domain, d), f_j=ScalarField(domain, fj), s_after=ScalarField(domain, s + d),
        )
        audits.append(AuditOut.model_validate(energy_chain_audit(record, run_config.p)))

    logger.info("Audit finished: run=%s steps=%d", run_dir, len(audits))
    return "passed", {"audited_run": report["run_id"],
                      "audit": [a.model_dump(mode="json") for a in audits]}


# ---------- Evans ----------

def run_evans(config: ExperimentConfig, ctx: RunContext) -> Tuple[str, Dict[str, Any]]:
    m = manifold_from(config)
    domain = surface_domain_from(config, m)
    K = condenser_from(config, domain)
    run = evans_iterate(domain, K, m, config.p, config.n_max, tol=config.tol, quad_tol=config.quad_tol)
    rows = capacity_asymptotics(run, config.p, config.t_list, tol=config.tol)

    write_csv(ctx.out_dir / "asymptotics.csv", ["t", "capacity", "normalized"],
              [(r.t, r.capacity, r.normalized) for r in rows])
    write_node_table(ctx.out_dir / "evans.csv", domain, {"value": run.limit.values})

    answer = " ".join(f"{r.t!r}:{r.normalized!r}" for r in rows)
    logger.info("Evans finished: n_max=%d M=%.6g m=%.6g", config.n_max, run.M, run.m)
    return answer, {
        "M": run.M,
        "m": run.m,
        "levels": [EvansLevelOut.model_validate(lv).model_dump(mode="json") for lv in run.levels],
        "asymptotics": [AsymptoticsRowOut.model_validate(r).model_dump(mode="json") for r in rows],
    }
