"""Run configuration: TOML sections per module, flag overrides, seed from the environment.

Precedence is flag > ``CMRL_SEED`` (seed only) > config file > built-in default.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TASKS = ("painting", "tire", "custom")
METHODS = ("full", "markov", "stacking")
SEED_ENV = "CMRL_SEED"


@dataclass(frozen=True)
class RunSection:
    task: str = "painting"
    seed: int = 0
    placement: int = 0
    episodes: int = 500  # training episodes collected by `collect`
    horizon: int = 100
    out_dir: str = "runs"


@dataclass(frozen=True)
class EnvSection:
    """Geometry overrides. Empty lists keep the task's default geometry."""

    dims: list = field(default_factory=list)
    bucket_cell: list = field(default_factory=list)
    canvas_cell: list = field(default_factory=list)
    canvas_region: list = field(default_factory=list)
    lug_cells: list = field(default_factory=list)
    center_cell: list = field(default_factory=list)
    terminal_on_success: bool = True
    # custom task only
    triggers: list = field(default_factory=list)
    goals: list = field(default_factory=list)


@dataclass(frozen=True)
class DiscoverySection:
    epsilon: float = 1e-4
    max_var: int = 0  # 0 means n + 1 + 8
    restarts: int = 8
    eps_grad_center: float = 1e-5
    eps_grad_radius: float = 1e-5
    step_center: float = 0.1
    step_radius: float = 0.1
    max_grad_iters: int = 500
    min_gain: float = 1e-5
    min_gain_frac: float = 0.05
    r_min: float = 0.25
    polish_rounds: int = 8
    polish_slack: float = 0.05
    polish_centers: int = 8
    polish_points: int = 64
    event_on_reward: bool = False
    kernel_w: float = 1.0
    kernel_alpha: float = 1.0
    soft_w_e: float = 4.0
    soft_form: str = "logistic"
    bins: int = 16


@dataclass(frozen=True)
class PlannerSection:
    method: str = "full"
    window: int = 1  # stacking history length
    gamma: float = 0.99
    tol: float = 1e-8
    max_sweeps: int = 100_000


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 200  # test episodes for the policy
    test_episodes: int = 500  # held-out random episodes for reward prediction


@dataclass(frozen=True)
class ReportSection:
    sizes: list = field(default_factory=lambda: [100, 250, 500, 1000])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    placements: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    methods: list = field(default_factory=lambda: ["full", "markov", "stacking"])
    windows: list = field(default_factory=lambda: [1, 2, 4])


SECTIONS = {
    "run": RunSection,
    "env": EnvSection,
    "discovery": DiscoverySection,
    "planner": PlannerSection,
    "eval": EvalSection,
    "report": ReportSection,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = RunSection()
    env: EnvSection = EnvSection()
    discovery: DiscoverySection = DiscoverySection()
    planner: PlannerSection = PlannerSection()
    eval: EvalSection = EvalSection()
    report: ReportSection = ReportSection()

    def echo(self) -> dict:
        """Everything that shapes the results; the output location is left out."""
        out = asdict(self)
        del out["run"]["out_dir"]
        return out

    def validate(self) -> "RunConfig":
        r = self.run
        if r.task not in TASKS:
            raise ConfigError(f"run.task must be one of {TASKS}, got {r.task!r}")
        if r.episodes < 1 or r.horizon < 1:
            raise ConfigError("run.episodes and run.horizon must be positive")
        if r.placement < 0:
            raise ConfigError("run.placement must be nonnegative")
        if self.planner.method not in METHODS:
            raise ConfigError(f"planner.method must be one of {METHODS}, got {self.planner.method!r}")
        if self.planner.window < 1:
            raise ConfigError("planner.window must be at least 1")
        if not 0 <= self.planner.gamma < 1:
            raise ConfigError("planner.gamma must lie in [0, 1)")
        if self.eval.episodes < 1 or self.eval.test_episodes < 1:
            raise ConfigError("eval episode counts must be positive")
        bad = [m for m in self.report.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown report methods {bad}")
        if not self.report.sizes or any(int(s) < 1 for s in self.report.sizes):
            raise ConfigError("report.sizes must be positive episode counts")
        if r.task == "custom" and not (self.env.dims and self.env.goals):
            raise ConfigError("the custom task needs env.dims and env.goals")
        return self


def _coerce(section: str, key: str, default, value):
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported type")


def _apply(cfg: RunConfig, section: str, values: dict) -> RunConfig:
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    if not isinstance(values, dict):
        raise ConfigError(f"[{section}] must be a table")
    current = getattr(cfg, section)
    defaults = {f.name: getattr(current, f.name) for f in fields(current)}
    unknown = sorted(set(values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    updates = {k: _coerce(section, k, defaults[k], v) for k, v in values.items()}
    return replace(cfg, **{section: replace(current, **updates)})


def parse_toml(text: str, source: str = "<config>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def _parse_value(raw: str):
    """A flag value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def load_config(path=None, overrides=(), env=None) -> RunConfig:
    """Build a validated config.

    ``overrides`` is a sequence of ``("section.key", value)`` pairs; string
    values are parsed as TOML literals.
    """
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        doc = parse_toml(text, str(path))
        for section, values in doc.items():
            cfg = _apply(cfg, section, values)
    env = os.environ if env is None else env
    seed = env.get(SEED_ENV)
    if seed not in (None, ""):
        try:
            cfg = _apply(cfg, "run", {"seed": int(seed)})
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {seed!r}") from None
    for dotted, value in overrides:
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        if isinstance(value, str):
            value = _parse_value(value)
        cfg = _apply(cfg, section, {key: value})
    return cfg.validate()
