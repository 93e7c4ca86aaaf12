"""Experiment configuration files (YAML) and their validation.

A configuration describes one experiment::

    name: congestion_bnn_memoryless
    game: {kind: congestion_example}
    protocol: {kind: bnn}
    pdm: {kind: memoryless}
    integrator: {T: 100, h: 0.01}
    initial_conditions: {kind: grid, resolution: 3, exclude_centroid: true}
    output: {dir: out}

Every block is validated when the file is loaded, before anything runs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .edm import Protocol, bnn_protocol, logit_protocol, smith_protocol
from .errors import InvalidArgumentError
from .games import (
    PopulationGame,
    affine_game,
    congestion_example,
    demand_response_example,
    task_allocation_example,
)
from .pdm import PdmModel
from .simplex import simplex3_grid, barycentric_grid, simplex_state

GAME_KINDS = ("affine", "congestion_example", "demand_response_example", "task_allocation_example")
PROTOCOL_KINDS = ("bnn", "smith", "logit")
PDM_KINDS = ("memoryless", "anticipatory", "smoothing", "general")
IC_KINDS = ("explicit", "grid", "random")
EQ_KINDS = ("auto", "nash", "perturbed")


class ConfigError(InvalidArgumentError):
    """The configuration file is malformed or violates a precondition."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _number(value, name: str, positive: bool = False, nonneg: bool = False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    _require(np.isfinite(v), f"{name} must be finite")
    if positive:
        _require(v > 0, f"{name} must be positive, got {v}")
    if nonneg:
        _require(v >= 0, f"{name} must be nonnegative, got {v}")
    return v


def _only_keys(block: dict, allowed: set, name: str) -> None:
    extra = set(block) - allowed
    _require(not extra, f"unknown keys in {name}: {sorted(extra)}")


@dataclass
class GameConfig:
    kind: str
    matrix: Optional[list] = None
    offset: Optional[list] = None

    @classmethod
    def from_dict(cls, d: dict) -> "GameConfig":
        _require(isinstance(d, dict), "game block must be a mapping")
        _only_keys(d, {"kind", "matrix", "offset"}, "game")
        kind = d.get("kind")
        _require(kind in GAME_KINDS, f"game.kind must be one of {GAME_KINDS}, got {kind!r}")
        cfg = cls(kind, d.get("matrix"), d.get("offset"))
        if kind == "affine":
            _require(cfg.matrix is not None and cfg.offset is not None, "affine games need matrix and offset")
            M = np.asarray(cfg.matrix, dtype=float)
            b = np.asarray(cfg.offset, dtype=float)
            _require(M.ndim == 2 and M.shape[0] == M.shape[1] == b.size, "affine matrix must be n x n and offset length n")
            cfg.matrix = M.tolist()
            cfg.offset = b.tolist()
        return cfg

    def build(self) -> PopulationGame:
        if self.kind == "affine":
            return affine_game(self.matrix, self.offset)
        return {
            "congestion_example": congestion_example,
            "demand_response_example": demand_response_example,
            "task_allocation_example": task_allocation_example,
        }[self.kind]()


@dataclass
class ProtocolConfig:
    kind: str
    eta: Optional[float] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        _require(isinstance(d, dict), "protocol block must be a mapping")
        _only_keys(d, {"kind", "eta"}, "protocol")
        kind = d.get("kind")
        _require(kind in PROTOCOL_KINDS, f"protocol.kind must be one of {PROTOCOL_KINDS}, got {kind!r}")
        eta = None
        if kind == "logit":
            _require("eta" in d, "logit protocol needs eta")
            eta = _number(d["eta"], "protocol.eta", positive=True)
        return cls(kind, eta)

    def build(self, n: int) -> Protocol:
        if self.kind == "bnn":
            return bnn_protocol(n)
        if self.kind == "smith":
            return smith_protocol(n)
        return logit_protocol(n, self.eta)


@dataclass
class PdmConfig:
    kind: str = "memoryless"
    alpha: Optional[float] = None
    mu0: Optional[float] = None
    mu1: Optional[float] = None
    mu2: Optional[float] = None
    q0: Optional[list] = None

    @classmethod
    def from_dict(cls, d: dict) -> "PdmConfig":
        _require(isinstance(d, dict), "pdm block must be a mapping")
        _only_keys(d, {"kind", "alpha", "mu0", "mu1", "mu2", "q0"}, "pdm")
        kind = d.get("kind", "memoryless")
        _require(kind in PDM_KINDS, f"pdm.kind must be one of {PDM_KINDS}, got {kind!r}")
        cfg = cls(kind)
        need = {"memoryless": (), "anticipatory": ("alpha", "mu2"), "smoothing": ("alpha",), "general": ("alpha", "mu0", "mu1", "mu2")}[kind]
        for key in need:
            _require(key in d, f"pdm kind {kind} needs {key}")
            setattr(cfg, key, _number(d[key], f"pdm.{key}", nonneg=True))
        if cfg.alpha is not None:
            _require(cfg.alpha > 0, "pdm.alpha must be positive")
        if kind == "anticipatory":
            _require(cfg.mu2 > 0, "anticipatory pdm needs mu2 > 0")
        if kind == "general":
            _require(abs(cfg.mu0 + cfg.mu1 - 1) <= 1e-12, "pdm.mu0 + pdm.mu1 must equal 1")
        if d.get("q0") is not None:
            q0 = np.asarray(d["q0"], dtype=float)
            _require(q0.ndim == 1 and np.all(np.isfinite(q0)), "pdm.q0 must be a finite vector")
            cfg.q0 = q0.tolist()
        return cfg

    def build(self, game: PopulationGame) -> PdmModel:
        if self.kind == "memoryless":
            return PdmModel.memoryless(game)
        if self.kind == "anticipatory":
            return PdmModel.anticipatory(game, self.alpha, self.mu2)
        if self.kind == "smoothing":
            return PdmModel.smoothing(game, self.alpha)
        return PdmModel.general(game, self.alpha, self.mu0, self.mu1, self.mu2)


@dataclass
class IntegratorConfig:
    T: float = 100.0
    h: float = 0.01

    @classmethod
    def from_dict(cls, d: dict) -> "IntegratorConfig":
        _require(isinstance(d, dict), "integrator block must be a mapping")
        _only_keys(d, {"T", "h"}, "integrator")
        T = _number(d.get("T", 100.0), "integrator.T", positive=True)
        h = _number(d.get("h", 0.01), "integrator.h", positive=True)
        _require(h <= T, "integrator.h must not exceed integrator.T")
        return cls(T, h)


@dataclass
class InitialConditionsConfig:
    """Initial population states.

    ``explicit`` lists the points; ``grid`` takes the barycentric grid of the
    given resolution (optionally interior only and/or without the centroid);
    ``random`` draws ``count`` uniform points with ``seed``.
    """

    kind: str
    points: Optional[list] = None
    resolution: Optional[int] = None
    exclude_centroid: bool = False
    interior_only: bool = False
    count: Optional[int] = None
    seed: Optional[int] = None

    @classmethod
    def from_dict(cls, d: dict) -> "InitialConditionsConfig":
        _require(isinstance(d, dict), "initial_conditions block must be a mapping")
        _only_keys(d, {"kind", "points", "resolution", "exclude_centroid", "interior_only", "count", "seed"}, "initial_conditions")
        kind = d.get("kind")
        _require(kind in IC_KINDS, f"initial_conditions.kind must be one of {IC_KINDS}, got {kind!r}")
        cfg = cls(kind)
        if kind == "explicit":
            pts = d.get("points")
            _require(isinstance(pts, list) and len(pts) > 0, "explicit initial conditions need a non-empty points list")
            cfg.points = [list(map(float, p)) for p in pts]
        elif kind == "grid":
            res = d.get("resolution")
            _require(isinstance(res, int) and res >= 1, "grid initial conditions need an integer resolution >= 1")
            cfg.resolution = res
            cfg.exclude_centroid = bool(d.get("exclude_centroid", False))
            cfg.interior_only = bool(d.get("interior_only", False))
        else:
            count, seed = d.get("count"), d.get("seed")
            _require(isinstance(count, int) and count >= 1, "random initial conditions need an integer count >= 1")
            _require(isinstance(seed, int), "random initial conditions need an integer seed")
            cfg.count, cfg.seed = count, seed
        return cfg

    def build(self, n: int, mass: float = 1.0) -> np.ndarray:
        if self.kind == "explicit":
            pts = np.array(self.points, dtype=float)
            _require(pts.ndim == 2 and pts.shape[1] == n, f"initial states must have {n} entries")
            for p in pts:
                try:
                    simplex_state(p, mass)
                except InvalidArgumentError as exc:
                    raise ConfigError(f"invalid initial state {p.tolist()}: {exc}") from None
            return pts
        if self.kind == "grid":
            pts = simplex3_grid(self.resolution, mass) if n == 3 else barycentric_grid(self.resolution, n, mass)
            if self.interior_only:
                pts = pts[np.all(pts > 0, axis=1)]
            if self.exclude_centroid:
                pts = pts[np.max(np.abs(pts - mass / n), axis=1) > 1e-12]
            _require(len(pts) > 0, "grid initial conditions are empty after filtering")
            return pts
        rng = np.random.default_rng(self.seed)
        return rng.dirichlet(np.ones(n), size=self.count) * mass


@dataclass
class EquilibriumConfig:
    kind: str = "auto"
    grid_resolution: int = 60
    tol: float = 1e-8

    @classmethod
    def from_dict(cls, d: dict) -> "EquilibriumConfig":
        _require(isinstance(d, dict), "equilibrium block must be a mapping")
        _only_keys(d, {"kind", "grid_resolution", "tol"}, "equilibrium")
        kind = d.get("kind", "auto")
        _require(kind in EQ_KINDS, f"equilibrium.kind must be one of {EQ_KINDS}")
        res = d.get("grid_resolution", 60)
        _require(isinstance(res, int) and res >= 50, "equilibrium.grid_resolution must be an integer >= 50")
        return cls(kind, res, _number(d.get("tol", 1e-8), "equilibrium.tol", positive=True))


@dataclass
class StochasticConfig:
    N: list = field(default_factory=lambda: [100, 1000, 10000])
    seeds: int = 20
    T: float = 50.0
    seed_base: int = 0
    x0: Optional[list] = None

    @classmethod
    def from_dict(cls, d: dict) -> "StochasticConfig":
        _require(isinstance(d, dict), "stochastic block must be a mapping")
        _only_keys(d, {"N", "seeds", "T", "seed_base", "x0"}, "stochastic")
        Ns = d.get("N", [100, 1000, 10000])
        _require(isinstance(Ns, list) and Ns and all(isinstance(v, int) and v >= 1 for v in Ns), "stochastic.N must be a list of positive integers")
        seeds = d.get("seeds", 20)
        _require(isinstance(seeds, int) and seeds >= 1, "stochastic.seeds must be a positive integer")
        seed_base = d.get("seed_base", 0)
        _require(isinstance(seed_base, int), "stochastic.seed_base must be an integer")
        x0 = d.get("x0")
        if x0 is not None:
            x0 = list(map(float, x0))
        return cls(list(Ns), seeds, _number(d.get("T", 50.0), "stochastic.T", positive=True), seed_base, x0)


@dataclass
class ExperimentConfig:
    """A complete, validated experiment description."""

    name: str
    game: GameConfig
    protocol: ProtocolConfig
    pdm: PdmConfig = field(default_factory=PdmConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    initial_conditions: Optional[InitialConditionsConfig] = None
    equilibrium: EquilibriumConfig = field(default_factory=EquilibriumConfig)
    stochastic: Optional[StochasticConfig] = None
    checks: dict = field(default_factory=dict)
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, d: Any) -> "ExperimentConfig":
        _require(isinstance(d, dict), "configuration must be a mapping")
        _only_keys(
            d,
            {"name", "game", "protocol", "pdm", "integrator", "initial_conditions", "equilibrium", "stochastic", "checks", "output"},
            "configuration",
        )
        name = d.get("name")
        _require(isinstance(name, str) and name.strip() != "", "configuration needs a non-empty name")
        _require("game" in d and "protocol" in d, "configuration needs game and protocol blocks")
        checks = d.get("checks") or {}
        _require(isinstance(checks, dict), "checks block must be a mapping")
        _only_keys(checks, {"passivity"}, "checks")
        output = d.get("output") or {}
        _require(isinstance(output, dict), "output block must be a mapping")
        _only_keys(output, {"dir"}, "output")
        cfg = cls(
            name=name,
            game=GameConfig.from_dict(d["game"]),
            protocol=ProtocolConfig.from_dict(d["protocol"]),
            pdm=PdmConfig.from_dict(d.get("pdm") or {"kind": "memoryless"}),
            integrator=IntegratorConfig.from_dict(d.get("integrator") or {}),
            initial_conditions=InitialConditionsConfig.from_dict(d["initial_conditions"]) if d.get("initial_conditions") is not None else None,
            equilibrium=EquilibriumConfig.from_dict(d.get("equilibrium") or {}),
            stochastic=StochasticConfig.from_dict(d["stochastic"]) if d.get("stochastic") is not None else None,
            checks={"passivity": bool(checks.get("passivity", False))},
            output_dir=str(output.get("dir", "out")),
        )
        cfg._validate_dimensions()
        return cfg

    def _validate_dimensions(self) -> None:
        game = self.game.build()
        if self.pdm.q0 is not None:
            _require(len(self.pdm.q0) == game.n, f"pdm.q0 must have {game.n} entries")
        if self.initial_conditions is not None:
            self.initial_conditions.build(game.n, game.mass)
        if self.stochastic is not None and self.stochastic.x0 is not None:
            try:
                simplex_state(self.stochastic.x0, game.mass)
            except InvalidArgumentError as exc:
                raise ConfigError(f"stochastic.x0: {exc}") from None

    def to_dict(self) -> dict:
        def clean(obj):
            return {k: v for k, v in asdict(obj).items() if v is not None}

        out = {
            "name": self.name,
            "game": clean(self.game),
            "protocol": clean(self.protocol),
            "pdm": clean(self.pdm),
            "integrator": clean(self.integrator),
            "equilibrium": clean(self.equilibrium),
            "checks": dict(self.checks),
            "output": {"dir": self.output_dir},
        }
        if self.initial_conditions is not None:
            out["initial_conditions"] = clean(self.initial_conditions)
        if self.stochastic is not None:
            out["stochastic"] = clean(self.stochastic)
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    # convenience builders
    def build_game(self) -> PopulationGame:
        return self.game.build()

    def build_pdm(self) -> PdmModel:
        return self.pdm.build(self.build_game())

    def build_protocol(self) -> Protocol:
        return self.protocol.build(self.build_game().n)

    def build_initial_states(self) -> np.ndarray:
        _require(self.initial_conditions is not None, "configuration has no initial_conditions block")
        game = self.build_game()
        return self.initial_conditions.build(game.n, game.mass)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a YAML experiment file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return ExperimentConfig.from_dict(data)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return ExperimentConfig.from_dict(data)
