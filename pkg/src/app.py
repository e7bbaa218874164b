import argparse
import hashlib
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .commands import COMMANDS
from .config import settings
from .dependencies import load_experiment_config, run_context
from .domain.schemas import FailureOut, ReportOut
from .errors import ConfigError, DomainError, InvariantError, exit_code_for
from .infrastructure.artifacts import write_json

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors are input errors here."""

    def error(self, message: str):
        raise ConfigError(message)


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _flag_parser() -> argparse.ArgumentParser:
    flags = _Parser(add_help=False)
    flags.add_argument("--config", dest="config_path", help="TOML experiment file")
    flags.add_argument("--manifold")
    flags.add_argument("--p", type=float)
    flags.add_argument("--rmin", type=float)
    flags.add_argument("--rmax", type=float)
    flags.add_argument("--grid", type=int)
    flags.add_argument("--grid-theta", type=int)
    flags.add_argument("--grading")
    flags.add_argument("--tol", type=float)
    flags.add_argument("--quad-tol", type=float)
    flags.add_argument("--steps", type=int)
    flags.add_argument("--gap-base", type=float)
    flags.add_argument("--energy-rule", action="store_true", default=None)
    flags.add_argument("--exhaustion", choices=["proper", "log"])
    flags.add_argument("--t-list", type=_floats)
    flags.add_argument("--levels", type=_floats)
    flags.add_argument("--p-list", type=_floats)
    flags.add_argument("--n-max", type=int)
    flags.add_argument("--condenser")
    flags.add_argument("--trials", type=int)
    flags.add_argument("--run")
    flags.add_argument("--out")
    flags.add_argument("--seed", type=int)
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plab", description="p-potential laboratory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parent = _flag_parser()
    for name in COMMANDS:
        sub.add_parser(name, parents=[parent])
    return parser


def _write_report(out_dir: Path, report: ReportOut) -> None:
    try:
        write_json(out_dir / "report.json", report.model_dump(mode="json", by_alias=True))
    except OSError as e:
        log.error("Cannot write report: dir=%s error=%s", out_dir, e)


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
    )
    argv = list(sys.argv[1:] if argv is None else argv)

    # 1) arguments and config; failures here still leave a report behind
    command, config, ctx = "unknown", None, None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        overrides: Dict[str, Any] = {k: v for k, v in vars(args).items()
                                     if k not in ("command", "config_path")}
        config = load_experiment_config(args.config_path, overrides)
        ctx = run_context(command, config)
    except DomainError as exc:
        out_dir = Path(config.out if config else _out_from_argv(argv))
        run_id = hashlib.sha256(" ".join(argv).encode("utf-8")).hexdigest()[:16]
        print(f"error: {exc}", file=sys.stderr)
        _write_report(out_dir, ReportOut(
            schema_version=settings.SCHEMA_VERSION, command=command, run_id=run_id,
            seed=config.seed if config else 0, status="error",
            config=config.model_dump(mode="json") if config else {},
            failure=FailureOut(error=type(exc).__name__, detail=str(exc), exit_code=exit_code_for(exc)),
        ))
        return exit_code_for(exc)

    # 2) the subcommand itself
    log.info("Run start: command=%s run_id=%s seed=%d", command, ctx.run_id, ctx.seed)
    report = ReportOut(schema_version=settings.SCHEMA_VERSION, command=command, run_id=ctx.run_id,
                       seed=ctx.seed, config=config.model_dump(mode="json"))
    try:
        answer, result = COMMANDS[command](config, ctx)
    except DomainError as exc:
        code = exit_code_for(exc)
        invariant = exc.invariant if isinstance(exc, InvariantError) else None
        if invariant:
            log.error("Invariant failed: command=%s invariant=%s detail=%s", command, invariant, exc.detail)
        print(f"error: {exc}", file=sys.stderr)
        report.status = "failed" if invariant else "error"
        report.failure = FailureOut(invariant=invariant, error=type(exc).__name__, detail=str(exc),
                                    exit_code=code)
        _write_report(ctx.out_dir, report)
        return code

    report.result = result
    _write_report(ctx.out_dir, report)
    print(answer)
    log.info("Run finished: command=%s run_id=%s", command, ctx.run_id)
    return 0


def _out_from_argv(argv: List[str]) -> str:
    for i, arg in enumerate(argv):
        if arg == "--out" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--out="):
            return arg.split("=", 1)[1]
    return settings.OUTPUT_DIR


if __name__ == "__main__":
    sys.exit(main())
