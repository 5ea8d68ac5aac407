"""Experiment configuration: one JSON document, CLI flags override fields."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..env import BoxSpec, Environment, LawSpec, TrapSpec, constant, plant_trap, sample_iid
from ..errors import ConfigError, RcmError

KINDS = ("heat-decay", "coarse-diagnostics", "spectral-verify", "trap-conditional",
         "proposition-sweep", "verify-all")


@dataclass
class ExperimentConfig:
    kind: str = "verify-all"
    dimension: int = 2
    side: int = 32
    topology: str = "torus"
    law: dict | None = None  # LawSpec fields; None means constant conductance
    constant: float = 1.0
    traps: list = field(default_factory=list)  # [{"edge": [u, v], "scale": K, "access_path": [...]}]
    env_file: str | None = None
    alpha: float = 0.5
    origin: int = 0
    n_range: list = field(default_factory=lambda: [1, 15])
    theta: int = 8
    r: int | None = None
    delta: int = 4
    mc_budget: int = 10_000
    mode: str = "exactBridge"
    rho: float = 2.0
    ell: int = 0  # coarse trajectory length for ergodic averages (0 = skip)
    master_seed: int = 0
    env_seed: int | None = None  # defaults to master_seed
    threads: int = 1
    out: str | None = None
    override_horizon: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def box(self) -> BoxSpec:
        return BoxSpec(self.dimension, self.side, self.topology)

    @property
    def n_values(self) -> list[int]:
        if len(self.n_range) == 2:
            return list(range(int(self.n_range[0]), int(self.n_range[1]) + 1))
        return [int(n) for n in self.n_range]

    @property
    def n(self) -> int:
        return max(self.n_values)

    def trap_r(self) -> int:
        from ..trapstat import TrapEventSpec
        return TrapEventSpec.default_r(self.dimension) if self.r is None else self.r

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError("kind", f"must be one of {', '.join(KINDS)}")
        try:
            box = self.box
        except RcmError as exc:
            raise ConfigError("dimension/side/topology", str(exc)) from exc
        if self.law is not None:
            try:
                LawSpec.from_dict(self.law)
            except (RcmError, TypeError, KeyError) as exc:
                raise ConfigError("law", str(exc)) from exc
        if not 0.0 < self.constant <= 1.0:
            raise ConfigError("constant", "must lie in (0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha", "must lie in (0, 1]")
        if not 0 <= self.origin < box.n_vertices:
            raise ConfigError("origin", f"must index a vertex of the box (< {box.n_vertices})")
        ns = self.n_values
        if not ns or min(ns) < 1:
            raise ConfigError("n_range", "needs positive integers ([lo, hi] or an explicit list)")
        if self.theta < 1:
            raise ConfigError("theta", "must be >= 1")
        if self.r is not None and self.r < 0:
            raise ConfigError("r", "must be >= 0")
        if self.delta < 1:
            raise ConfigError("delta", "must be >= 1")
        if self.mc_budget < 2:
            raise ConfigError("mc_budget", "must be >= 2")
        if self.mode not in ("exactBridge", "rejection"):
            raise ConfigError("mode", "must be exactBridge or rejection")
        if self.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed", "must be an unsigned 64-bit integer")
        if self.kind == "trap-conditional" and self.theta > self.n:
            raise ConfigError("theta", f"must not exceed n = {self.n}")
        if self.kind == "proposition-sweep" and 2 * self.delta > self.n:
            raise ConfigError("delta", f"must be at most n/2 = {self.n / 2}")
        horizon_t = {"heat-decay": 2 * self.n, "trap-conditional": 2 * self.n,
                     "proposition-sweep": 2 * self.n}.get(self.kind)
        if horizon_t is not None and not self.override_horizon and self.env_file is None:
            limit = box.horizon(self.origin, closed=True)
            if horizon_t > limit:
                raise ConfigError("n_range", f"2n = {horizon_t} exceeds the horizon {limit}; "
                                             "shrink n or pass --override-horizon")
        return self

    def build_env(self, strict: bool = True) -> Environment:
        if self.env_file is not None:
            return Environment.read(self.env_file, strict=strict)
        box = self.box
        seed = self.master_seed if self.env_seed is None else self.env_seed
        env = sample_iid(LawSpec.from_dict(self.law), box, seed) if self.law else constant(box, self.constant)
        for t in self.traps:
            env = plant_trap(env, TrapSpec.from_dict(t))
        return env
