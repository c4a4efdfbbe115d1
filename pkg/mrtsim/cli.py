"""``mrtsim`` command line: simulate, export, analyze, audit, count, replay, montecarlo.

Every stage reads the previous stage's files, so the stages compose over a
directory. Exit status: 0 success, 1 invalid input, 2 audit failure.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

from . import __version__
from .audit import run_audit
from .dataset import export as export_rows
from .dataset import read_export, write_dictionary
from .estimator import EffectSpec, estimate, moderation_report, replicate, sensitivity_compare
from .eventlog import read_event_log
from .exceptions import (
    EventLogError,
    ExportFormatError,
    RankDeficiencyError,
    UnknownComponent,
    ValidationError,
)
from .jsonc import as_canonical_json_string
from .model import count_decision_points
from .pipeline import build_variant, unavailability_trend
from .scenario import ScenarioConfig, load_scenario
from .sim import World, run

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_AUDIT_FAILED = 2

LOG_LEVEL_ENV = "MRTSIM_LOG_LEVEL"
EVENT_LOG_NAME = "events.jsonl"


class _Parser(argparse.ArgumentParser):
    # argparse would exit with 2, which is reserved for audit failures
    def error(self, message):
        raise ValidationError(message)


def _scenario(args) -> ScenarioConfig:
    if args.scenario:
        scenario = load_scenario(args.scenario)
    else:
        scenario = ScenarioConfig.heartsteps_default()
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    return scenario


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _emit(obj) -> None:
    sys.stdout.write(as_canonical_json_string(obj) + "\n")


def cmd_simulate(args) -> int:
    scenario = _scenario(args)
    out = _out_dir(args)
    world = World(scenario)
    log, ledger = world.run()
    summary = dict(world.summary)
    summary["event_log_sha256"] = log.write(os.path.join(out, EVENT_LOG_NAME))
    summary["ledger_sha256"] = ledger.write(out)[1]
    summary["seed"] = scenario.seed
    _emit(summary)
    return EXIT_OK


def _write_exports(event_log, out: str, variants: Sequence[str], fmt: str) -> List[str]:
    paths = []
    for variant in variants:
        rows = build_variant(event_log, variant)
        name = "dataset.{}".format(fmt) if len(variants) == 1 else "dataset_{}.{}".format(variant, fmt)
        paths.append(export_rows(rows, fmt, os.path.join(out, name)))
    paths.append(write_dictionary(out))
    return paths


def cmd_export(args) -> int:
    event_log = read_event_log(args.events)
    for path in _write_exports(event_log, _out_dir(args), [args.variant], args.format):
        print(path)
    return EXIT_OK


def cmd_replay(args) -> int:
    """Re-run the scenario recorded in a log, check it reproduces, then rebuild every export."""
    event_log = read_event_log(args.events)
    rerun, _ = run(event_log.scenario())
    if rerun.sha256() != event_log.sha256():
        logger.error("Replaying {} did not reproduce the recorded events".format(args.events))
        return EXIT_INVALID
    for path in _write_exports(event_log, _out_dir(args), ["zero", "redundant"], args.format):
        print(path)
    return EXIT_OK


def _spec(args) -> EffectSpec:
    return EffectSpec(
        component_id=args.component,
        outcome_variant="phone_fit" if args.proxy else args.variant,
        controls=tuple(args.control or ()),
        moderators=tuple(args.moderator or ()),
    )


def cmd_analyze(args) -> int:
    rows = read_export(args.dataset)
    spec = _spec(args)
    if args.compare:
        report = sensitivity_compare(rows, read_export(args.compare), spec)
        print(report.zero.table())
        print(report.redundant.table())
        print("differing rows: {}".format(report.differing_rows))
        result = report.to_dict()
    else:
        est = estimate(rows, spec)
        print(est.table())
        result = est.to_dict()
        if args.time_moderation:
            result["moderation"] = moderation_report(rows, spec)
    if args.trend:
        print(unavailability_trend(rows, spec.component_id).to_string(index=False))
    if args.out:
        path = os.path.join(_out_dir(args), "estimate.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write(as_canonical_json_string(result) + "\n")
    return EXIT_OK


def cmd_audit(args) -> int:
    report = run_audit(args.dataset, args.events)
    print(report.to_text())
    if args.out:
        with open(os.path.join(_out_dir(args), "audit.json"), "w", encoding="utf-8") as f:
            f.write(as_canonical_json_string(report.to_dict()) + "\n")
    return EXIT_OK if report.passed else EXIT_AUDIT_FAILED


def cmd_count(args) -> int:
    if args.scenario:
        trial = load_scenario(args.scenario).trial
    else:
        trial = ScenarioConfig.heartsteps_default().trial
    components = [args.component] if args.component else [c.id for c in trial.components]
    total = 0
    for cid in components:
        n = count_decision_points(trial, cid, per_participant=args.per_participant)
        total += n
        if len(components) > 1:
            print("{}\t{}".format(cid, n))
    print(total)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    scenario = _scenario(args)
    seeds = range(scenario.seed, scenario.seed + args.replications)
    summary = replicate(scenario, _spec(args), list(seeds), term=args.term, workers=args.workers)
    _emit(summary.to_dict())
    return EXIT_OK


def _add_spec_flags(p) -> None:
    p.add_argument("--component", default="suggestions")
    p.add_argument("--variant", choices=("zero", "redundant"), default="zero")
    p.add_argument("--proxy", action="store_true", help="fit the phone step-count outcome instead")
    p.add_argument("--control", action="append", help="control covariate, repeatable")
    p.add_argument("--moderator", action="append", help="moderator, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrtsim", description="Micro-randomized trial simulator and analysis.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="run a scenario, write the event log and sealed ledger")
    p.add_argument("--scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export", help="build the analysis dataset from an event log")
    p.add_argument("--events", required=True)
    p.add_argument("--variant", choices=("zero", "redundant"), default="zero")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("replay", help="reproduce a run from its log and rebuild all exports")
    p.add_argument("--events", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("analyze", help="estimate proximal effects from an export")
    p.add_argument("--dataset", required=True)
    p.add_argument("--compare", help="redundant-variant export for a sensitivity comparison")
    p.add_argument("--time-moderation", action="store_true")
    p.add_argument("--trend", action="store_true", help="print the unavailability trend")
    p.add_argument("--out")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("audit", help="run the data-quality checklist")
    p.add_argument("--dataset", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("count", help="count decision points of a trial design")
    p.add_argument("--scenario")
    p.add_argument("--config", choices=("default",), default="default")
    p.add_argument("--component")
    p.add_argument("--per-participant", action="store_true")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("montecarlo", help="replicate a scenario over seeds and summarise")
    p.add_argument("--scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--term", default="A_centered")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def configure_logging(verbose: int = 0) -> None:
    if verbose:
        level = logging.DEBUG if verbose > 1 else logging.INFO
    else:
        level = getattr(logging, os.environ.get(LOG_LEVEL_ENV, "WARNING").upper(), logging.WARNING)
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as e:
        sys.stderr.write("mrtsim: {}\n".format(e))
        return EXIT_INVALID
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except (
        ValidationError,
        EventLogError,
        ExportFormatError,
        RankDeficiencyError,
        UnknownComponent,
        OSError,
    ) as e:
        sys.stderr.write("mrtsim {}: {}\n".format(args.command, e))
        return EXIT_INVALID
