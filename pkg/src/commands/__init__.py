from typing import Any, Callable, Dict, Tuple

from src.dependencies import RunContext
from src.domain.schemas import ExperimentConfig

from .constructions import run_audit, run_evans, run_khasminskii
from .convexity import run_lemma_star
from .model import run_classify
from .potential import run_capacity, run_scaling

Handler = Callable[[ExperimentConfig, RunContext], Tuple[str, Dict[str, Any]]]

COMMANDS: Dict[str, Handler] = {
    "classify": run_classify,
    "capacity": run_capacity,
    "scaling": run_scaling,
    "khasminskii": run_khasminskii,
    "evans": run_evans,
    "lemma-star": run_lemma_star,
    "audit": run_audit,
}
