import argparse
from dataclasses import dataclass
import json
import logging
import math
import os
import sys
from typing import Any, Callable, Dict, List, Optional, get_args

logging.basicConfig(
    level=logging.INFO,
    format='%(message)s'
)
logger = logging.getLogger('treewalk')

# Reduce noise from other loggers
logging.getLogger('concurrent.futures').setLevel(logging.WARNING)
logging.getLogger('asyncio').setLevel(logging.WARNING)
logging.getLogger('dotenv').setLevel(logging.WARNING)

from pydantic import ValidationError

from config import APP_NAME, DEBUG, DEFAULT_WORKERS, OUTPUT_DIRECTORY, OUTPUT_DIRECTORY_ENV, WARNINGS_LOG_NAME
from env_model import (
    EnvTree,
    make_gaussian_binary_family,
    psi_and_derivative,
    recurrence_regime,
    solve_kappa,
    validate_assumptions,
)
from errors import ConfigError, NoRootError, TreeWalkError
from models import (
    Caps,
    Check,
    EnvironmentBlock,
    EnvironmentSpec,
    ExperimentKind,
    ExperimentPlan,
    FamilyId,
    RunConfig,
    TableRow,
    VerificationReport,
)
import montecarlo
from range_sampler import sample_range
from reports import WarningsLogHandler, emit_report
import rng as rngs
from walker import level_stats, run_walk

KINDS = get_args(ExperimentKind)
THEOREM_KINDS = ("theorem1", "theorem2", "yaglom", "prop-joint")
NEEDS_KAPPA = THEOREM_KINDS + ("constants", "oracle-check")

EXIT_PASSED = 0
EXIT_USAGE = 1
EXIT_FAILED = 2


@dataclass
class RunContext:
    config: RunConfig
    spec: EnvironmentSpec
    plan: Optional[ExperimentPlan]


COMMANDS: Dict[str, Callable[[RunContext], List[VerificationReport]]] = {}


def command(kind: str):
    """Register the handler of one experiment kind"""
    def register(fn):
        COMMANDS[kind] = fn
        return fn
    return register


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict, overrides: Dict[str, Any]) -> Dict:
    """Set dotted keys (plan.n_grid, environment.kappa, ...) in a raw config dict"""
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"cannot set a field inside a {type(child).__name__}", key)
            node = child
        node[parts[-1]] = value
    return data


def load_config(config_path: Optional[str], overrides: Dict[str, Any]) -> RunConfig:
    """
    Read a JSON config (or start empty) and apply overrides

    Raises:
        ConfigError: unreadable file or a key that cannot be set
        ValidationError: schema violations, with the offending key path
    """
    data: Dict = {}
    if config_path:
        try:
            with open(config_path, 'r') as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read {config_path}: {e.strerror}", "config")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_path} is not valid JSON ({e.msg}, line {e.lineno})", "config")
    return RunConfig.model_validate(apply_overrides(data, overrides))


def build_spec(block: EnvironmentBlock) -> EnvironmentSpec:
    """EnvironmentSpec from an environment block; a bare kappa selects the tuned gaussian-binary family"""
    if block.kappa is not None:
        if block.params is not None or block.table is not None:
            raise ConfigError("give either kappa or params/table, not both", "environment.kappa")
        if block.family_id != FamilyId.GAUSSIAN_BINARY:
            raise ConfigError("a target kappa is only supported for gaussian-binary", "environment.kappa")
        if not block.kappa > 1:
            raise ConfigError("kappa must exceed 1", "environment.kappa")
        return make_gaussian_binary_family(block.kappa)
    if block.family_id == FamilyId.FINITE_SUPPORT:
        table = tuple(TableRow(probability=r.probability, marks=tuple(r.marks), jitter=r.jitter)
                      for r in block.table or [])
        return EnvironmentSpec(FamilyId.FINITE_SUPPORT, table=table)
    if block.params is None:
        raise ConfigError("give kappa or params [d, mu, sigma2]", "environment")
    return EnvironmentSpec(block.family_id, tuple(float(x) for x in block.params))


def build_plan(config: RunConfig, spec: EnvironmentSpec) -> ExperimentPlan:
    """ExperimentPlan from the plan block; kappa is solved from the environment"""
    if config.plan is None:
        raise ConfigError("master_seed is required for stochastic experiments", "plan.master_seed")
    try:
        kappa = solve_kappa(spec)
    except NoRootError:
        if config.kind in NEEDS_KAPPA:
            raise ConfigError("psi has no root above 1, so kappa is infinite and there are no limit targets",
                              "environment")
        kappa = math.inf
    block = config.plan
    fields = block.model_dump(exclude={"caps"})
    fields["n_grid"] = tuple(block.n_grid)
    fields["lambda_grid"] = tuple(block.lambda_grid)
    return ExperimentPlan(
        spec=spec,
        kappa=kappa,
        caps=Caps(**block.caps.model_dump()),
        workers=config.workers or DEFAULT_WORKERS,
        **fields,
    )


def _validation_messages(error: ValidationError) -> List[str]:
    return [f"{'.'.join(str(part) for part in e['loc']) or 'config'}: {e['msg']}" for e in error.errors()]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@command("psi")
def psi_command(ctx: RunContext) -> List[VerificationReport]:
    t = ctx.config.t
    psi, dpsi = psi_and_derivative(ctx.spec, t)
    try:
        kappa: Optional[float] = solve_kappa(ctx.spec)
    except NoRootError:
        kappa = None
    print(round(psi, 12) + 0.0)
    report = VerificationReport(kind="psi", passed=True)
    report.estimates.update({"t": t, "psi": psi, "psi_prime": dpsi, "kappa": kappa,
                             "regime": recurrence_regime(ctx.spec), "spec": ctx.spec.to_dict()})
    return [report]


@command("validate")
def validate_command(ctx: RunContext) -> List[VerificationReport]:
    validation = validate_assumptions(ctx.spec)
    report = VerificationReport(kind="validate", passed=validation.passed, checks=validation.checks)
    report.estimates.update({"kappa": validation.kappa, "psi_prime_1": validation.psi_prime_1,
                             "regime": validation.regime, "spec": validation.spec})
    for name in validation.violations:
        logger.warning(f"⚠️ assumption failed: {name}")
    return [report]


@command("walk")
def walk_command(ctx: RunContext) -> List[VerificationReport]:
    """One quenched walk to its p-th return, with the exact local-time identities checked"""
    plan = ctx.plan
    report = montecarlo.new_report("walk", plan)
    tree = EnvTree(plan.spec, rngs.derived_seed(plan.master_seed, "walk-tree"), plan.caps)
    record = run_walk(tree, plan.p, plan.caps, rngs.generator(plan.master_seed, "walk"), debug=DEBUG)
    report.checks.append(Check(name="walk completed", passed=record.completed,
                               detail=f"stopped by the {record.cap_hit} cap" if record.cap_hit else ""))
    if record.completed:
        stats = level_stats(record, tree)
        report.checks.append(Check(name="Z_0 = p", passed=stats.Z[0] == plan.p,
                                   value=float(stats.Z[0]), target=float(plan.p)))
        report.checks.append(Check(name="sum of L_k = tau - p", passed=sum(stats.L) == record.tau_p - plan.p,
                                   value=float(sum(stats.L)), target=float(record.tau_p - plan.p)))
        report.checks.append(Check(name="root edge crossed p times",
                                   passed=record.edge_counts.get(tree.root) == plan.p,
                                   value=float(record.edge_counts.get(tree.root, 0)), target=float(plan.p)))
        report.tables["levels"] = [list(row) for row in stats.rows()]
    else:
        report.cap_hit_rate = 1.0
        logger.warning(f"⚠️ walk stopped by the {record.cap_hit} cap after {record.tau_p} steps")
    report.estimates["metadata"] = record.metadata(plan.master_seed)
    return [montecarlo.finish(report)]


@command("range")
def range_command(ctx: RunContext) -> List[VerificationReport]:
    """One annealed range sampled directly as a multi-type tree"""
    plan = ctx.plan
    report = montecarlo.new_report("range", plan)
    rt = sample_range(plan.spec, plan.p, plan.caps, rngs.generator(plan.master_seed, "range"))
    report.checks.append(Check(name="range complete", passed=rt.complete,
                               detail=f"stopped by the {rt.cap_hit} cap" if rt.cap_hit else ""))
    Z = rt.Z()
    report.checks.append(Check(name="Z_0 = p", passed=int(Z[0]) == plan.p, value=float(Z[0]), target=float(plan.p)))
    if not rt.complete:
        report.cap_hit_rate = 1.0
        logger.warning(f"⚠️ range stopped by the {rt.cap_hit} cap at {rt.size} vertices")
    report.tables["range_levels"] = [list(row) for row in rt.summary_rows()]
    report.estimates.update({"p": plan.p, "size": rt.size, "height": rt.height, "complete": rt.complete,
                             "cap_hit": rt.cap_hit, "sum_Z": int(Z.sum())})
    return [montecarlo.finish(report)]


@command("reduce")
def reduce_command(ctx: RunContext) -> List[VerificationReport]:
    return [montecarlo.verify_regeneration(ctx.plan)]


@command("constants")
def constants_command(ctx: RunContext) -> List[VerificationReport]:
    return [montecarlo.verify_constants(ctx.plan)]


@command("oracle-check")
def oracle_command(ctx: RunContext) -> List[VerificationReport]:
    return [montecarlo.oracle_check(ctx.plan)]


def _theorem(suite: Callable[[ExperimentPlan], VerificationReport]):
    """Theorem suites only run on a plan whose samplers pass the oracle check"""
    def handler(ctx: RunContext) -> List[VerificationReport]:
        oracle = montecarlo.oracle_check(ctx.plan)
        if not oracle.passed:
            logger.error("❌ oracle check failed; refusing to run the theorem suite")
            return [oracle]
        return [oracle, suite(ctx.plan)]
    return handler


command("theorem1")(_theorem(montecarlo.verify_theorem1))
command("theorem2")(_theorem(montecarlo.verify_theorem2))
command("yaglom")(_theorem(montecarlo.verify_yaglom))
command("prop-joint")(_theorem(montecarlo.verify_prop_joint))


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def run(config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> int:
    """
    Load, run and report one experiment

    Args:
        config_path: JSON config file; None starts from an empty config
        overrides: Dotted keys applied on top of the file. An "output_directory"
            entry wins over TREEWALK_OUTPUT_DIR, which wins over the file.

    Returns:
        0 when every check passed, 2 on a statistical acceptance failure,
        1 on a usage or configuration error
    """
    overrides = dict(overrides or {})
    explicit_out = overrides.pop("output_directory", None)
    try:
        config = load_config(config_path, overrides)
        spec = build_spec(config.environment)
        plan = build_plan(config, spec) if config.kind not in ("psi", "validate") else None
    except ValidationError as e:
        for msg in _validation_messages(e):
            logger.error(f"❌ config error at {msg}")
        return EXIT_USAGE
    except ConfigError as e:
        logger.error(f"❌ config error at {e}")
        return EXIT_USAGE

    out = explicit_out or os.getenv(OUTPUT_DIRECTORY_ENV) or config.output_directory or OUTPUT_DIRECTORY
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as e:
        logger.error(f"❌ cannot create output directory {out}: {e.strerror}")
        return EXIT_USAGE
    handler = WarningsLogHandler(os.path.join(out, WARNINGS_LOG_NAME), config.kind)
    logger.addHandler(handler)
    try:
        logger.info(f"🚀 {APP_NAME}: {config.kind}")
        reports = COMMANDS[config.kind](RunContext(config=config, spec=spec, plan=plan))
        for report in reports:
            emit_report(report, config, out)
    except ConfigError as e:
        logger.error(f"❌ config error at {e}")
        return EXIT_USAGE
    except TreeWalkError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"❌ {e}")
        return EXIT_USAGE
    finally:
        logger.removeHandler(handler)

    passed = bool(reports) and all(r.passed for r in reports)
    print(f"{'✅' if passed else '❌'} {config.kind} {'passed' if passed else 'failed'}")
    return EXIT_PASSED if passed else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treewalk",
        description=f"{APP_NAME}: biased walks on Galton-Watson trees and their local-time limits",
    )
    parser.add_argument("kind", nargs="?", choices=KINDS, help="experiment to run (overrides the config's kind)")
    parser.add_argument("--config", "-c", default=None, help="JSON run configuration")
    parser.add_argument("--family", choices=[f.value for f in FamilyId], default=None, help="environment family")
    parser.add_argument("--kappa", type=float, default=None, help="target kappa of the gaussian-binary family")
    parser.add_argument("--t", type=float, default=None, help="psi evaluation point")
    parser.add_argument("--seed", type=int, default=None, help="plan.master_seed")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, value parsed as JSON (repeatable)")
    parser.add_argument("--out", "-o", default=None, help="output directory")
    parser.add_argument("--workers", "-j", type=int, default=None, help="worker processes")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    flags = {
        "kind": args.kind,
        "environment.family_id": args.family,
        "environment.kappa": args.kappa,
        "t": args.t,
        "plan.master_seed": args.seed,
        "output_directory": args.out,
        "workers": args.workers,
    }
    overrides.update({k: v for k, v in flags.items() if v is not None})
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}", "--set")
        overrides[key.strip()] = _parse_value(raw.strip())
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = overrides_from_args(args)
    except ConfigError as e:
        logger.error(f"❌ {e}")
        return EXIT_USAGE
    return run(args.config, overrides)


if __name__ == "__main__":
    sys.exit(main())
