"""Strict TOML experiment configuration.

Example::

    schema_version = 1
    seed = 0
    trials = 2

    [ensemble]
    kind = "iid-gaussian"
    N = 256
    K = 128

    [prior]
    name = "bernoulli-gaussian"
    sparsity = 0.2

    [likelihood]
    name = "awgn"
    noise_var = 0.01

    [solver]
    strategies = ["gamp-iid", "exact-ep"]
    damping = 0.7

    [output]
    dir = "results"

Unknown keys anywhere are rejected, with a close-match suggestion when one
exists.
"""
from __future__ import annotations

import difflib
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channels import CATALOG, Channel, make_channel
from .ensembles import KINDS, EnsembleSpec
from .errors import DomainError
from .solvers import STRATEGIES, SecondOrderStrategy, SolverConfig

SCHEMA_VERSION = 1


class ConfigError(DomainError):
    """Invalid experiment configuration; ``key`` is the dotted path of the culprit."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "results"
    trajectories: bool = True
    summary: str = "summary.jsonl"


@dataclass(frozen=True)
class ExperimentConfig:
    ensemble: EnsembleSpec
    prior: Channel
    likelihood: Channel
    solver: SolverConfig = field(default_factory=SolverConfig)
    strategies: tuple = ("gamp-full",)
    trials: int = 1
    seed: int = 0
    jobs: int = 1
    output: OutputSpec = field(default_factory=OutputSpec)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("must be >= 1", "trials")
        if self.jobs < 1:
            raise ConfigError("must be >= 1", "jobs")
        if not self.strategies:
            raise ConfigError("needs at least one strategy", "solver.strategies")


_TOP = ("schema_version", "seed", "trials", "jobs", "ensemble", "prior", "likelihood",
        "solver", "output")
_ENSEMBLE = ("kind", "N", "K", "singular_values")
_SOLVER = ("strategies", "strategy", "max_iterations", "tolerance", "damping",
           "record_residuals", "init")
_STRATEGY = tuple(f.name for f in fields(SecondOrderStrategy) if f.name != "kind")
_OUTPUT = tuple(f.name for f in fields(OutputSpec))


def _check_keys(table: dict, allowed, where: str) -> None:
    for key in table:
        if key not in allowed:
            path = f"{where}.{key}" if where else key
            close = difflib.get_close_matches(key, allowed, n=1, cutoff=0.6)
            hint = f"; did you mean {close[0]!r}?" if close else f"; allowed: {', '.join(allowed)}"
            raise ConfigError(f"unknown key{hint}", path)


def _table(doc: dict, key: str, required: bool = True) -> dict:
    if key not in doc:
        if required:
            raise ConfigError("missing table", key)
        return {}
    val = doc[key]
    if not isinstance(val, dict):
        raise ConfigError("must be a table", key)
    return val


def _channel(table: dict, where: str, role: str) -> Channel:
    if "name" not in table:
        raise ConfigError("missing channel name", f"{where}.name")
    name = table["name"]
    if name not in CATALOG:
        close = difflib.get_close_matches(str(name), CATALOG, n=1)
        hint = f"; did you mean {close[0]!r}?" if close else f"; known: {sorted(CATALOG)}"
        raise ConfigError(f"unknown channel {name!r}{hint}", f"{where}.name")
    params = {k: v for k, v in table.items() if k != "name"}
    allowed = tuple(f.name for f in fields(CATALOG[name]))
    _check_keys(params, allowed, where)
    try:
        ch = make_channel(name, **params)
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), where) from None
    if ch.role != role:
        raise ConfigError(f"{name!r} is a {ch.role} channel, expected a {role}", f"{where}.name")
    return ch


def config_from_dict(doc: dict) -> ExperimentConfig:
    _check_keys(doc, _TOP, "")
    version = doc.get("schema_version")
    if version is None:
        raise ConfigError("missing (current version is 1)", "schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported version {version!r}", "schema_version")
    for key in ("trials", "jobs"):
        val = doc.get(key, 1)
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise ConfigError(f"must be an integer >= 1, got {val!r}", key)

    ens = _table(doc, "ensemble")
    _check_keys(ens, _ENSEMBLE, "ensemble")
    for k in ("kind", "N", "K"):
        if k not in ens:
            raise ConfigError("missing", f"ensemble.{k}")
    if ens["kind"] not in KINDS:
        raise ConfigError(f"unknown kind {ens['kind']!r}; known: {KINDS}", "ensemble.kind")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("must be a non-negative integer", "seed")
    try:
        ensemble = EnsembleSpec(ens["kind"], int(ens["N"]), int(ens["K"]),
                                ens.get("singular_values", "marchenko-pastur"), seed)
    except DomainError as exc:
        raise ConfigError(str(exc), "ensemble") from None

    prior = _channel(_table(doc, "prior"), "prior", "prior")
    likelihood = _channel(_table(doc, "likelihood"), "likelihood", "likelihood")

    sol = _table(doc, "solver", required=False)
    _check_keys(sol, _SOLVER, "solver")
    strat = sol.get("strategy", {})
    if not isinstance(strat, dict):
        raise ConfigError("must be a table", "solver.strategy")
    _check_keys(strat, _STRATEGY, "solver.strategy")
    names = sol.get("strategies", ["gamp-full"])
    if isinstance(names, str):
        names = [names]
    for i, n in enumerate(names):
        if n not in STRATEGIES:
            close = difflib.get_close_matches(str(n), STRATEGIES, n=1)
            hint = f"; did you mean {close[0]!r}?" if close else f"; known: {STRATEGIES}"
            raise ConfigError(f"unknown strategy {n!r}{hint}", f"solver.strategies[{i}]")
    try:
        solver = SolverConfig(**{k: v for k, v in sol.items() if k not in ("strategies", "strategy")},
                              strategy=SecondOrderStrategy(names[0], **strat))
    except (DomainError, TypeError) as exc:
        raise ConfigError(str(exc), "solver") from None

    out = _table(doc, "output", required=False)
    _check_keys(out, _OUTPUT, "output")
    return ExperimentConfig(
        ensemble=ensemble, prior=prior, likelihood=likelihood, solver=solver,
        strategies=tuple(names), trials=int(doc.get("trials", 1)), seed=seed,
        jobs=int(doc.get("jobs", 1)), output=OutputSpec(**out), schema_version=version,
    )


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the message carries "(at line L, column C)"
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc)


def with_overrides(cfg: ExperimentConfig, seed: Optional[int] = None,
                   out_dir: Optional[str] = None,
                   strategies: Optional[List[str]] = None) -> ExperimentConfig:
    """Apply CLI overrides, revalidating the strategy names."""
    if seed is not None:
        cfg = replace(cfg, seed=seed, ensemble=replace(cfg.ensemble, seed=seed))
    if out_dir is not None:
        cfg = replace(cfg, output=replace(cfg.output, dir=str(out_dir)))
    if strategies:
        for n in strategies:
            if n not in STRATEGIES:
                raise ConfigError(f"unknown strategy {n!r}; known: {STRATEGIES}", "--strategy")
        cfg = replace(cfg, strategies=tuple(strategies))
    return cfg
