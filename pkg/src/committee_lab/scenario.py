"""Flat JSON scenarios: validation, canonical hashing and object builders."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from committee_lab.protocol import ProtocolConfig
from committee_lab.roles import LatentModel, RoleSuite
from committee_lab.state_system import ConfigError, StateSystem, make_chain_task

ENV_PREFIX = "COMMITTEE_LAB_"

# Keys that change how a run executes but not what it computes; they stay
# out of the run id so that worker count cannot change any output byte.
EXECUTION_KEYS = ("workers", "out")


def _list(*xs):
    return field(default_factory=lambda: list(xs))


@dataclass(frozen=True)
class Scenario:
    name: str = "default"
    # task
    L: int = 3
    arity: int = 4
    sound_count: int = 1
    stall_count: int = 0
    # latent model
    latent_kind: str = "point-mass-mixture"
    latent_masses: list = _list([0.8, 1.0])  # [q, weight] rows
    latent_rho: float = 0.0
    latent_alpha: float = 0.5
    latent_rows: list = _list()  # [weight, [q_1, ..., q_P]] rows
    latent_blind: float = 0.0
    latent_components: list = _list()  # [weight, a, b] rows
    # roles
    portfolio_size: int = 1
    beta: float = 0.8
    sigma: float = 0.3
    nu: float = 0.0
    tie_prob: float = 0.0
    pos_bias: float = 0.0
    critic_kind: str = "edge"
    comparator_kind: str = "edge"
    # protocol
    k: int = 4
    m: int = 2
    r: int = 3
    gate_mode: str = "reject-any"
    tau: int = 0
    tournament_rule: str = "copeland"
    debias_mode: str = "single-order"
    engine: str = "batch"
    # run
    trials: int = 10000
    seed: int = 0
    workers: int = 1
    out: str = "runs"
    # verify-bounds grid
    grid_L: list = _list(1, 3, 10)
    grid_k: list = _list(2, 4, 8)
    grid_m: list = _list(1, 2, 4)
    grid_r: list = _list(1, 3, 5)
    grid_beta: list = _list(0.5, 0.8)
    grid_sigma: list = _list(0.1, 0.3)
    # curves
    curve_k: list = _list(1, 2, 4, 8, 16, 32, 64)
    # sizing
    delta: float = 0.05
    alpha0: float = 0.5
    beta0: float = 0.5
    sigma0: float = 0.25
    # separation
    sep_M: int = 5
    sep_trials: int = 2000
    sep_samples: int = 16
    # candidate pools (defaults are the documented calibration point)
    pool_k: int = 8
    pool_count: int = 20000
    pool_judge_votes: int = 5
    pool_comparator_votes: int = 5
    pool_latent_masses: list = _list([0.0, 0.2], [0.2, 0.3], [0.6, 0.5])
    pool_beta: float = 0.7
    pool_sigma: float = 0.35
    pool_tie_prob: float = 0.0
    pool_pos_bias: float = 0.2
    pool_judge_false_reject: float = 0.4
    pool_debias: str = "single-order"
    pool_tau_rate: float | None = None
    pool_tau_count: int | None = 2
    pool_file: str | None = None
    pool_budget_grid: list = _list(1, 2, 4, 8)

    # ---------------------------------------------------------------- parsing

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "Scenario":
        known = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in data.items():
            if key not in known:
                raise ConfigError(f"unknown scenario key {key!r}", key)
            values[key] = _coerce(key, raw, known[key])
        sc = cls(**values)
        sc.validate()
        return sc

    def validate(self) -> None:
        for key in ("trials", "sep_trials", "pool_count", "workers", "sep_samples"):
            if getattr(self, key) < 1:
                raise ConfigError("must be positive", key)
        if self.seed < 0:
            raise ConfigError("must be non-negative", "seed")
        if self.engine not in ("batch", "scalar"):
            raise ConfigError(f"unknown engine {self.engine!r}", "engine")
        for key in ("grid_L", "grid_k", "grid_m", "grid_r", "grid_beta", "grid_sigma", "curve_k"):
            if not getattr(self, key):
                raise ConfigError("grid must be nonempty", key)
        if (self.pool_tau_rate is None) == (self.pool_tau_count is None):
            raise ConfigError("set exactly one of pool_tau_rate and pool_tau_count", "pool_tau_rate")
        # Building the objects runs their own validation.
        self.system()
        self.latent()
        self.suite()
        self.protocol()
        self.pool_latent()
        self.pool_suite()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in EXECUTION_KEYS}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @property
    def scenario_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return self.scenario_hash[:12]

    # --------------------------------------------------------------- builders

    def system(self, L: int | None = None) -> StateSystem:
        return make_chain_task(self.L if L is None else L, self.arity, self.sound_count, self.stall_count)

    def latent(self) -> LatentModel:
        try:
            if self.latent_kind == "point-mass-mixture":
                return LatentModel.point_masses([(float(q), float(w)) for q, w in self.latent_masses])
            if self.latent_kind == "common-shock":
                return LatentModel.common_shock(self.latent_rho, self.latent_alpha)
            if self.latent_kind == "per-family":
                return LatentModel.per_family([(float(w), [float(q) for q in qs]) for w, qs in self.latent_rows])
            if self.latent_kind == "beta-mixture":
                return LatentModel.beta_mixture(
                    self.latent_blind, [(float(w), float(a), float(b)) for w, a, b in self.latent_components])
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], exc.field_path or "latent_kind") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed latent table: {exc}", "latent_kind") from None
        raise ConfigError(f"unknown latent kind {self.latent_kind!r}", "latent_kind")

    def suite(self, **overrides) -> RoleSuite:
        kw = dict(portfolio_size=self.portfolio_size, beta=self.beta, sigma=self.sigma, nu=self.nu,
                  tie_prob=self.tie_prob, pos_bias=self.pos_bias, critic_kind=self.critic_kind,
                  comparator_kind=self.comparator_kind)
        kw.update(overrides)
        return RoleSuite(**kw)

    def protocol(self, **overrides) -> ProtocolConfig:
        kw = dict(k=self.k, m=self.m, r=self.r, gate_mode=self.gate_mode, tau=self.tau,
                  tournament_rule=self.tournament_rule, debias_mode=self.debias_mode)
        kw.update(overrides)
        return ProtocolConfig(**kw)

    def pool_latent(self) -> LatentModel:
        try:
            return LatentModel.point_masses([(float(q), float(w)) for q, w in self.pool_latent_masses])
        except (ConfigError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed pool latent: {exc}", "pool_latent_masses") from None

    def pool_suite(self) -> RoleSuite:
        return RoleSuite(beta=self.pool_beta, sigma=self.pool_sigma, tie_prob=self.pool_tie_prob,
                         pos_bias=self.pool_pos_bias, judge_false_reject=self.pool_judge_false_reject)


def _coerce(key: str, value: Any, f: dataclasses.Field) -> Any:
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    ann = str(f.type)
    if value is None:
        if "None" in ann:
            return None
        raise ConfigError("may not be null", key)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("expected a boolean", key)
        return value
    if ann.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if ann.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if ann.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    if ann == "list":
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", key)
        return value
    return value


def _parse_env_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_values(environ: Mapping[str, str] | None = None) -> dict:
    """Scenario keys set through ``COMMITTEE_LAB_<KEY>`` variables."""
    environ = os.environ if environ is None else environ
    names = {f.name.upper(): f.name for f in dataclasses.fields(Scenario)}
    out = {}
    for var, raw in environ.items():
        if var.startswith(ENV_PREFIX):
            key = var[len(ENV_PREFIX):]
            if key not in names:
                raise ConfigError(f"unknown scenario key in environment variable {var}", key.lower())
            out[names[key]] = _parse_env_value(raw)
    return out


def load_scenario(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
    allow_env_override: bool = False,
) -> Scenario:
    """Merge defaults, environment, scenario file and explicit overrides.

    File keys win over environment keys unless ``allow_env_override``;
    explicit overrides (command-line flags) always win.
    """
    file_values: dict = {}
    if path is not None:
        try:
            file_values = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"scenario file {path} not found", "scenario") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", "scenario") from None
        if not isinstance(file_values, dict):
            raise ConfigError("scenario file must hold a JSON object", "scenario")
    env = env_values(environ)
    merged = {**file_values, **env} if allow_env_override else {**env, **file_values}
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return Scenario.from_mapping(merged)
