"""Command-line front end.

    evflex plan      solve the flexibility-enabled plan and write its areas
    evflex base      uncontrolled-charging base case
    evflex validate  plan, then Monte-Carlo validation of the areas
    evflex payment   plan, then pool payments inside the areas
    evflex report    render figures from the files already in --out
    evflex full      all of the above
    evflex run       whatever the config's "mode" names

Exit codes: 0 ok, 1 unexpected error, 2 config or input error,
3 infeasible, 4 solver limit.  Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .conic import SolverError
from .conic.standard import PresolveInfeasible
from .flexarea import AreaError
from .network import NetworkError
from .sopf import ModelError
from .utility import UtilityError

log = logging.getLogger("evflex")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_LIMIT = 0, 1, 2, 3, 4
COMMANDS = ("plan", "base", "validate", "payment", "report", "full", "run")
_MODE_STAGES = {
    "base": ["base"], "flex": ["plan"], "validate": ["plan", "validate"],
    "payment": ["plan", "payment"], "full": ["base", "plan", "validate", "payment", "report"],
}
_COMMAND_MODE = {"plan": "flex", "base": "base", "validate": "validate", "payment": "payment", "full": "full"}


class StageError(Exception):
    def __init__(self, stage: str, code: int, kind: str, message: str):
        super().__init__(message)
        self.stage, self.code, self.kind = stage, code, kind


def _beta_arg(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        raise argparse.ArgumentTypeError(f"beta must be a number or a JSON table, got {text!r}") from None


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evflex", description="Risk-aware flexibility planning for EV charging pools.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration (defaults apply to missing keys)")
    ap.add_argument("--seed", type=int, help="scenario seed")
    ap.add_argument("--beta", type=_beta_arg, help="risk level: a number in [0, 1] or a JSON table")
    ap.add_argument("--scenarios", type=int, help="number of planning scenarios")
    ap.add_argument("--sims", type=int, help="number of Monte-Carlo simulations")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def _fail(err: StageError) -> int:
    sys.stderr.write(json.dumps({"error": {"stage": err.stage, "type": err.kind, "message": str(err),
                                           "exit_code": err.code}}, sort_keys=True) + "\n")
    return err.code


def _classify(stage: str, exc: Exception) -> StageError:
    if isinstance(exc, ConfigError):
        return StageError(stage, EXIT_CONFIG, "config", str(exc))
    if isinstance(exc, (NetworkError, ModelError, UtilityError, AreaError, FileNotFoundError)):
        return StageError(stage, EXIT_CONFIG, "input", str(exc))
    if isinstance(exc, PresolveInfeasible):
        return StageError(stage, EXIT_INFEASIBLE, "infeasible", str(exc))
    if isinstance(exc, SolverError):
        code = EXIT_INFEASIBLE if exc.report.status in ("infeasible", "unbounded") else EXIT_LIMIT
        return StageError(stage, code, "solver", str(exc))
    return StageError(stage, EXIT_ERROR, type(exc).__name__, str(exc))


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import pipeline

    overrides = {"scenarios.seed": args.seed, "beta": args.beta, "scenarios.count": args.scenarios,
                 "validation.sims": args.sims, "paths.out": args.out}
    if args.command in _COMMAND_MODE:
        overrides["mode"] = _COMMAND_MODE[args.command]
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        return _fail(StageError("config", EXIT_CONFIG, "config", str(exc)))

    stages = ["report"] if args.command == "report" else _MODE_STAGES[cfg.mode]
    stage = "inputs"
    try:
        inp = pipeline.load_inputs(cfg)
        out = cfg.out_dir
        out.mkdir(parents=True, exist_ok=True)
        sol = area = None
        for stage in stages:
            log.info("stage %s", stage)
            if stage == "base":
                s = pipeline.run_base(cfg, inp, out)
                log.info("base case: lowest voltage %.4f pu, substation loading %.3f",
                         s["lowest_voltage"], s["highest_substation_loading"])
            elif stage == "plan":
                sol, area, s = pipeline.run_plan(cfg, inp, out)
                log.info("plan %s: objective %.4f, max cone gap %.2e", s["status"], s["objective"],
                         s["exactness"]["max_gap"])
            elif stage == "validate":
                s = pipeline.run_validate(cfg, inp, out, sol, area)
                log.info("violation frequency %.4f", s["violation_frequency"])
            elif stage == "payment":
                s = pipeline.run_payment(cfg, inp, out, sol, area)
                log.info("payment median %.2f", s["median"])
            elif stage == "report":
                made = pipeline.run_report(out, inp.net.v_min)
                log.info("figures: %s", ", ".join(made) or "none")
        stage = "manifest"
        pipeline.write_manifest(cfg, inp, out, stages)
    except Exception as exc:  # every failure leaves as machine-readable JSON
        err = _classify(stage, exc)
        if err.code == EXIT_ERROR:
            log.exception("stage %s failed", stage)
        return _fail(err)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
