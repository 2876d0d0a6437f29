"""Command line: collect, discover, plan, eval and report.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric error,
1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import experiment as ex
from .config import METHODS, TASKS, RunConfig, load_config
from .discovery import CausalGraph, graph_document
from .errors import CmrlError, ConfigError, ParseError
from .trajectory import load_dataset, save_dataset

log = logging.getLogger("cmrl")

SUBCOMMANDS = ("collect", "discover", "plan", "eval", "report")

# flag name -> dotted config key
FLAG_KEYS = {
    "task": "run.task",
    "seed": "run.seed",
    "episodes": "run.episodes",
    "placement": "run.placement",
    "horizon": "run.horizon",
    "out_dir": "run.out_dir",
    "method": "planner.method",
    "window": "planner.window",
    "eval_episodes": "eval.episodes",
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--seed", type=int)
    p.add_argument("--placement", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("-o", "--output", help="output file (default: a fixed name under run.out_dir)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="record random-policy episodes to a JSONL dataset")
    _common(p)
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("discover", help="find memory units; writes the causal graph JSON")
    _common(p)
    p.add_argument("--data", help="dataset path (default: <out_dir>/dataset.jsonl)")

    p = sub.add_parser("plan", help="fit a model and plan; writes model and policy JSON")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--graph", help="graph JSON from `discover` (full method; discovery runs if omitted)")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--window", type=int)
    p.add_argument("--policy-output", help="policy path (default: <out_dir>/policy.json)")

    p = sub.add_parser("eval", help="evaluate a planned policy; writes a metrics CSV")
    _common(p)
    p.add_argument("--model", help="model JSON (default: <out_dir>/model.json)")
    p.add_argument("--policy", help="policy JSON (default: <out_dir>/policy.json)")
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int)

    p = sub.add_parser("report", help="learning curves over training sizes, seeds and placements")
    _common(p)
    return parser


def config_from_args(args, env=None) -> RunConfig:
    overrides = []
    for name, key in FLAG_KEYS.items():
        v = getattr(args, name, None)
        if v is not None:
            overrides.append((key, v))
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides.append((key.strip(), value.strip()))
    return load_config(args.config, overrides, env)


def _path(cfg: RunConfig, given, default_name: str) -> str:
    return given if given else os.path.join(cfg.run.out_dir, default_name)


def _write(path: str, text: str):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None


def _load_data(cfg: RunConfig, given):
    path = _path(cfg, given, "dataset.jsonl")
    if not os.path.exists(path):
        raise ConfigError(f"dataset {path} does not exist (run `collect` first or pass --data)")
    return load_dataset(path)


def cmd_collect(cfg: RunConfig, args) -> str:
    d = ex.collect(cfg)
    path = _path(cfg, args.output, "dataset.jsonl")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_dataset(d, path)
    log.info("collected %d episodes of %d steps into %s", d.L, d.h, path)
    return path


def cmd_discover(cfg: RunConfig, args) -> str:
    d = _load_data(cfg, args.data)
    graph, report = ex.run_discovery(cfg, d)
    doc = graph_document(graph, report)
    doc["run_config"] = cfg.echo()
    path = _path(cfg, args.output, "graph.json")
    _write(path, ex.dumps(doc))
    log.info("%d memory unit(s); discovery took %.1f s", len(graph.units), report.wall_clock)
    return path


def cmd_plan(cfg: RunConfig, args) -> str:
    d = _load_data(cfg, args.data)
    method = cfg.planner.method
    graph = None
    if method == "full" and args.graph:
        graph = CausalGraph.from_json(_read_json(args.graph))
    trained = ex.train(cfg, d, method, graph)
    schema = d.schema
    model_path = _path(cfg, args.output, "model.json")
    policy_path = _path(cfg, args.policy_output, "policy.json")
    _write(model_path, ex.dumps(ex.model_document(trained, schema, cfg)))
    _write(policy_path, ex.dumps(ex.policy_document(trained, schema, cfg)))
    log.info("planned %s model with %d states in %d sweeps", method, trained.model.n_states, trained.values.sweeps)
    return policy_path


def cmd_eval(cfg: RunConfig, args) -> str:
    model_doc = _read_json(_path(cfg, args.model, "model.json"))
    policy_doc = _read_json(_path(cfg, args.policy, "policy.json"))
    trained = ex.load_trained(model_doc, policy_doc)
    row = ex.evaluate(cfg, trained)
    path = _path(cfg, args.output, "metrics.csv")
    _write(path, ex.write_csv([row], ex.EVAL_COLUMNS, cfg))
    log.info("%s: success %.3f, mean reward %.3f", trained.method, row["success_rate"], row["mean_reward"])
    return path


def cmd_report(cfg: RunConfig, args) -> str:
    def progress(placement, seed, L, m, w, row):
        log.info("placement %s seed %s L=%d %s%s: reward %.3f", placement, seed, L, m, f"-{w}" if w else "",
                 row["mean_reward"])

    rows = ex.learning_curve(cfg, progress)
    path = _path(cfg, args.output, "learning_curve.csv")
    _write(path, ex.write_csv(rows, ex.CURVE_COLUMNS, cfg))
    return path


COMMANDS = {
    "collect": cmd_collect,
    "discover": cmd_discover,
    "plan": cmd_plan,
    "eval": cmd_eval,
    "report": cmd_report,
}


def run(argv=None, env=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args, env)
        path = COMMANDS[args.command](cfg, args)
    except CmrlError as exc:
        print(f"cmrl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # invalid parameter values surface from dataclass checks
        print(f"cmrl {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    print(path)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
