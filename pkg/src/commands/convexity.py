# src/commands/convexity.py
import logging
from typing import Any, Dict, Tuple

from src.dependencies import RunContext
from src.domain.schemas import ExperimentConfig, SuiteOut
from src.errors import AssertionFailure
from src.infrastructure.artifacts import write_csv
from src.services.convexity_service import delta_lower_suite, lemma_star_suite

logger = logging.getLogger(__name__)


def run_lemma_star(config: ExperimentConfig, ctx: RunContext) -> Tuple[str, Dict[str, Any]]:
    star, modulus = [], []
    for p in config.p_list:
        star.append(lemma_star_suite(p, config.trials, ctx.rng))
        modulus.append(delta_lower_suite(p, max(1, config.trials // 10), ctx.rng))

    write_csv(ctx.out_dir / "lemma_star.csv",
              ["suite", "p", "trials", "hypothesis_met", "violations", "worst_margin"],
              [(name, s.p, s.trials, s.hypothesis_met, s.violations, s.worst_margin)
               for name, suites in (("lemma", star), ("modulus", modulus)) for s in suites])

    bad = [s for s in star + modulus if s.violations]
    if bad:
        first = bad[0]
        raise AssertionFailure("lemma-star", f"p={first.p}: {first.violations} violations "
                                             f"(worst margin {first.worst_margin:.3e})")
    total = sum(s.trials for s in star)
    logger.info("Lemma-star finished: p_list=%s trials=%d", config.p_list, total)
    return "passed", {
        "lemma_star": [SuiteOut.model_validate(s).model_dump(mode="json") for s in star],
        "modulus": [SuiteOut.model_validate(s).model_dump(mode="json") for s in modulus],
    }
