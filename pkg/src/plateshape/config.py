"""Experiment configuration: JSON-compatible flat sections mapped onto dataclasses."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

from .errors import InvalidArgumentError
from .rm_fem import DEFAULT_CLUSTER_TOL, DEFAULT_K, MaterialParams, material_from_engineering

EXPERIMENTS = ("spectrum", "stability", "atlas-stability", "hadamard", "gamma-deriv", "splitting",
               "ball-criticality", "biharmonic-limit")


class ConfigError(InvalidArgumentError):
    """Malformed or inconsistent configuration (CLI usage error)."""


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "disk"  # square | disk | atlas
    radius: float = 1.0
    size: float = 1.0
    refine_level: int = 3
    path: str | None = None

    def validate(self):
        if self.kind not in ("square", "disk", "atlas"):
            raise ConfigError(f"unknown domain kind {self.kind!r}")
        if self.kind == "atlas":
            if not self.path or not os.path.exists(self.path):
                raise ConfigError(f"atlas file {self.path!r} does not exist")
        if self.refine_level < 0:
            raise ConfigError("refine_level must be >= 0")
        if not (self.radius > 0 and self.size > 0):
            raise ConfigError("radius and size must be positive")


@dataclass(frozen=True)
class MaterialSpec:
    t: float = 0.1
    lam: float | None = 1.0
    mu: float | None = 1.0
    k: float = DEFAULT_K
    E: float | None = None
    nu: float | None = None

    def params(self) -> MaterialParams:
        if self.E is not None or self.nu is not None:
            if self.E is None or self.nu is None:
                raise ConfigError("engineering input needs both E and nu")
            return material_from_engineering(self.E, self.nu, self.k, t=self.t)
        if self.lam is None or self.mu is None:
            raise ConfigError("give lam and mu, or E and nu")
        return MaterialParams(t=self.t, lam=self.lam, mu=self.mu, k=self.k)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    domain: DomainSpec = field(default_factory=DomainSpec)
    material: MaterialSpec = field(default_factory=MaterialSpec)
    n_eigs: int = 6
    family: str = "dilation"
    amplitudes: tuple = (0.08, 0.04, 0.02, 0.01)
    fields: tuple = ("x",)
    eps: float = 1e-3
    thicknesses: tuple = (0.2, 0.1, 0.05)
    shear_rule: str = "full"
    cluster_tol: float = DEFAULT_CLUSTER_TOL
    refine_levels: tuple = ()
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment tag {self.experiment!r}; expected one of {EXPERIMENTS}")
        self.domain.validate()
        if self.n_eigs < 1:
            raise ConfigError("n_eigs must be >= 1")
        amps = list(self.amplitudes)
        if not amps or any(a <= 0 for a in amps) or any(b >= a for a, b in zip(amps, amps[1:])):
            raise ConfigError("amplitudes must be positive and strictly descending")
        if self.shear_rule not in ("full", "reduced"):
            raise ConfigError("shear_rule must be 'full' or 'reduced'")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not (0 <= self.seed < 2 ** 64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        try:
            self.material.params()
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("amplitudes", "fields", "thicknesses", "refine_levels"):
            d[key] = list(d[key])
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def input_hash(self, extra: str = "") -> str:
        h = hashlib.sha256(self.canonical_json().encode())
        h.update(extra.encode())
        return h.hexdigest()[:16]


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return data


def config_from_dict(data: dict, *, experiment: str | None = None, seed: int | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    if experiment is not None:
        if data.get("experiment", experiment) != experiment:
            raise ConfigError(f"config is for {data['experiment']!r}, not {experiment!r}")
        data["experiment"] = experiment
    if seed is not None:
        data["seed"] = seed
    if "experiment" not in data:
        raise ConfigError("missing 'experiment'")
    _build(ExperimentConfig, data, "config")
    try:
        dom = DomainSpec(**_build(DomainSpec, data.pop("domain", {}), "domain"))
        mat = MaterialSpec(**_build(MaterialSpec, data.pop("material", {}), "material"))
        for key in ("amplitudes", "fields", "thicknesses", "refine_levels"):
            if key in data:
                if not isinstance(data[key], (list, tuple)):
                    raise ConfigError(f"{key} must be a list")
                data[key] = tuple(data[key])
        cfg = ExperimentConfig(domain=dom, material=mat, **data)
    except TypeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return cfg.validate()


def load_config(path, **kw) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path!r} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
    return config_from_dict(data, **kw)
