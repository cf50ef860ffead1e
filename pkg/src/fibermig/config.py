"""Flat ``key = value`` experiment configuration.

One pair per line, dotted section keys, ``#`` starts a comment::

    scenario.name = parabolic-1d
    scaling.epsilon = 0.1
    sweep.epsilons = 0.2, 0.1, 0.05

A scenario name selects a set of defaults; explicit keys override them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fibers
from .environment import (ConstantTensor, Environment, GaussianBump, GriddedSignal,
                          GriddedTensor, NoSignal, Ramp, ScaledIdentity, ScalingParams)
from .errors import ConfigError, FiberMigError, UnsupportedConfiguration

PIPELINE_STAGES = ("kinetic", "macro", "meso", "weak")
MODEL_KINDS = ("ParabolicZero", "HyperbolicZero", "ParabolicCorrected", "HyperbolicCorrected")

BASE_DEFAULTS = {
    "scenario.name": "custom",
    "scaling.epsilon": "0.1",
    "scaling.kappa": "2",
    "scaling.a": "1.0",
    "scaling.n": "1",
    "fiber.variant": "uniform",
    "fiber.p_plus": "0.5",
    "fiber.mu": "0.0",
    "fiber.concentration": "1.0",
    "fiber.file": "",
    "signal.variant": "none",
    "signal.center": "",
    "signal.width": "0.5",
    "signal.amplitude": "1.0",
    "signal.slope": "",
    "signal.file": "",
    "tensor.variant": "identity",
    "tensor.alpha": "1.0",
    "tensor.matrix": "",
    "tensor.file": "",
    "grid.nx": "128",
    "grid.ns": "32",
    "grid.k": "32",
    "grid.length": "4.0",
    "run.t_end": "0.5",
    "run.pipeline": "kinetic, macro",
    "run.model": "",
    "run.snapshots": "10",
    "run.dt": "",
    "init.profile": "gaussian",
    "init.center": "",
    "init.width": "0.3",
    "init.velocity": "equilibrium",
    "sweep.epsilons": "0.2, 0.1, 0.05",
    "seed": "0",
    "output.dir": "out",
}

SCENARIOS = {
    "custom": {},
    "parabolic-1d": {
        "scaling.kappa": "2", "scaling.n": "1", "fiber.variant": "discrete", "fiber.p_plus": "0.5",
        "signal.variant": "ramp", "signal.slope": "1.0", "grid.nx": "512", "grid.ns": "32",
        "run.t_end": "0.5", "run.model": "ParabolicZero, ParabolicCorrected",
    },
    "hyperbolic-1d": {
        "scaling.kappa": "1", "scaling.n": "1", "fiber.variant": "discrete", "fiber.p_plus": "0.75",
        "signal.variant": "none", "grid.nx": "512", "grid.ns": "32", "run.t_end": "1.0",
        "run.model": "HyperbolicZero, HyperbolicCorrected",
    },
    "relaxation-2d": {
        "scaling.kappa": "2", "scaling.n": "2", "scaling.epsilon": "0.2", "fiber.variant": "vonmises",
        "fiber.concentration": "1.0", "grid.nx": "4", "grid.ns": "16", "grid.k": "32",
        "grid.length": "1.0", "init.profile": "uniform", "init.velocity": "isotropic",
        "run.t_end": "0.4", "run.pipeline": "kinetic",
    },
}


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    # -- typed accessors ------------------------------------------------------

    def get(self, key: str) -> str:
        return self.raw[key]

    def number(self, key: str, kind=float):
        text = self.raw[key]
        try:
            return kind(float(text)) if kind is int else kind(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None

    def vector(self, key: str, size: int | None = None, default=None) -> np.ndarray:
        text = self.raw[key].strip()
        if not text:
            if default is None:
                raise ConfigError(f"{key}: value required")
            return np.asarray(default, dtype=float)
        try:
            vals = np.array([float(v) for v in text.split(",")])
        except ValueError:
            raise ConfigError(f"{key}: expected comma separated numbers, got {text!r}") from None
        if size is not None and vals.size != size:
            raise ConfigError(f"{key}: expected {size} values, got {vals.size}")
        return vals

    def words(self, key: str) -> list[str]:
        return [w.strip() for w in self.raw[key].split(",") if w.strip()]

    def path(self, key: str) -> Path:
        p = Path(self.raw[key])
        return p if p.is_absolute() else self.base_dir / p

    # -- derived objects --------------------------------------------------------

    @property
    def scenario(self) -> str:
        return self.raw["scenario.name"]

    @property
    def n(self) -> int:
        return self.number("scaling.n", int)

    @property
    def length(self) -> float:
        return self.number("grid.length")

    @property
    def t_end(self) -> float:
        return self.number("run.t_end")

    @property
    def pipeline(self) -> list[str]:
        return self.words("run.pipeline")

    @property
    def epsilons(self) -> list[float]:
        return [float(e) for e in self.vector("sweep.epsilons")]

    @property
    def seed(self) -> int:
        return self.number("seed", int)

    def scaling(self, epsilon: float | None = None) -> ScalingParams:
        eps = self.number("scaling.epsilon") if epsilon is None else epsilon
        return ScalingParams(eps, self.number("scaling.kappa", int), self.number("scaling.a"), self.n)

    def models(self) -> list[str]:
        names = self.words("run.model")
        if not names:
            names = ["ParabolicZero" if self.number("scaling.kappa", int) == 2 else "HyperbolicZero"]
        return names

    def fiber(self):
        variant = self.raw["fiber.variant"].lower()
        n = self.n
        if variant == "uniform":
            return fibers.Uniform(n)
        if variant == "discrete":
            if n != 1:
                raise ConfigError("fiber.variant: 'discrete' needs scaling.n = 1")
            return fibers.Discrete(self.number("fiber.p_plus"))
        if variant == "vonmises":
            if n != 2:
                raise ConfigError("fiber.variant: 'vonmises' needs scaling.n = 2")
            return fibers.VonMises(self.number("fiber.mu"), self.number("fiber.concentration"))
        if variant == "bimodal":
            if n != 2:
                raise ConfigError("fiber.variant: 'bimodal' needs scaling.n = 2")
            mu, k = self.number("fiber.mu"), self.number("fiber.concentration")
            return fibers.Mixture([fibers.VonMises(mu, k), fibers.VonMises(mu + np.pi, k)], [0.5, 0.5])
        if variant == "gridded":
            try:
                return fibers.Gridded.from_csv(self.path("fiber.file"), self.length, n=n)
            except (OSError, FiberMigError, KeyError, ValueError) as exc:
                raise ConfigError(f"fiber.file: {exc}") from exc
        raise ConfigError(f"fiber.variant: unknown variant {variant!r}")

    def signal(self):
        variant = self.raw["signal.variant"].lower()
        n = self.n
        if variant == "none":
            return NoSignal(n)
        if variant == "gaussian":
            center = self.vector("signal.center", n, default=[self.length / 2] * n)
            return GaussianBump(center, self.number("signal.width"), self.number("signal.amplitude"))
        if variant == "ramp":
            return Ramp(self.vector("signal.slope", n))
        if variant == "gridded":
            try:
                return GriddedSignal.from_csv(self.path("signal.file"), self.length)
            except (OSError, KeyError, ValueError) as exc:
                raise ConfigError(f"signal.file: {exc}") from exc
        raise ConfigError(f"signal.variant: unknown variant {variant!r}")

    def tensor(self):
        variant = self.raw["tensor.variant"].lower()
        n = self.n
        if variant == "identity":
            return ScaledIdentity(n, self.number("tensor.alpha"))
        if variant == "constant":
            return ConstantTensor(self.vector("tensor.matrix", n * n).reshape(n, n))
        if variant == "gridded":
            try:
                return GriddedTensor.from_csv(self.path("tensor.file"), self.length)
            except (OSError, KeyError, ValueError) as exc:
                raise ConfigError(f"tensor.file: {exc}") from exc
        raise ConfigError(f"tensor.variant: unknown variant {variant!r}")

    def environment(self, epsilon: float | None = None) -> Environment:
        return Environment(self.scaling(epsilon), self.fiber(), self.signal(), self.tensor(),
                           self.length, meta={"scenario": self.scenario})

    def initial_density(self, xgrid) -> np.ndarray:
        profile = self.raw["init.profile"].lower()
        X = xgrid.mesh()
        if profile == "uniform":
            cbar = np.ones(xgrid.shape)
        elif profile == "gaussian":
            center = self.vector("init.center", self.n, default=[self.length / 2] * self.n)
            w = self.number("init.width")
            if w <= 0:
                raise ConfigError("init.width: must be positive")
            cbar = np.exp(-0.5 * np.sum((X - center) ** 2, axis=-1) / w**2)
        else:
            raise ConfigError(f"init.profile: unknown profile {profile!r}")
        return cbar / xgrid.integrate(cbar)

    def echo(self) -> list[str]:
        return [f"{k} = {self.raw[k]}" for k in sorted(self.raw)]

    # -- validation -------------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        self.scaling()
        for key, kind in (("grid.nx", int), ("grid.ns", int), ("grid.k", int), ("run.snapshots", int)):
            if self.number(key, kind) < 1:
                raise ConfigError(f"{key}: must be at least 1")
        if self.length <= 0:
            raise ConfigError("grid.length: must be positive")
        if self.t_end < 0:
            raise ConfigError("run.t_end: must be nonnegative")
        if self.raw["run.dt"] and self.number("run.dt") <= 0:
            raise ConfigError("run.dt: must be positive")
        for stage in self.pipeline:
            if stage not in PIPELINE_STAGES:
                raise ConfigError(f"run.pipeline: unknown stage {stage!r}")
        for model in self.models():
            if model not in MODEL_KINDS:
                raise ConfigError(f"run.model: unknown model {model!r}")
        if self.raw["init.velocity"] not in ("equilibrium", "isotropic"):
            raise ConfigError(f"init.velocity: unknown profile {self.raw['init.velocity']!r}")
        eps = self.epsilons
        if any(not 0 < e <= 1 for e in eps):
            raise ConfigError("sweep.epsilons: values must lie in (0, 1]")
        env = self.environment()
        self._check_symmetry(env)
        return self

    def _check_symmetry(self, env: Environment):
        if env.scaling.kappa != 2:
            return
        from .phase_grid import XGrid

        report = fibers.symmetry_check(env.fiber, samples=XGrid(self.n, min(self.number("grid.nx", int), 64),
                                                                   self.length).points())
        if not report["undirected"]:
            raise UnsupportedConfiguration(
                "kappa = 2 requires undirected fibers (E[q] = 0); "
                f"max |E| = {report['max_E']:.3e}")


def load_config(source, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a file path or a dict, apply scenario defaults and validate."""
    base_dir = Path.cwd()
    if isinstance(source, dict):
        given = {k: str(v) for k, v in source.items()}
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        given = parse_text(text, str(path))
        base_dir = path.parent
    if overrides:
        given.update({k: str(v) for k, v in overrides.items()})
    unknown = sorted(set(given) - set(BASE_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    name = given.get("scenario.name", "custom")
    if name not in SCENARIOS:
        raise ConfigError(f"scenario.name: unknown scenario {name!r}")
    raw = dict(BASE_DEFAULTS)
    raw.update(SCENARIOS[name])
    raw.update(given)
    return ExperimentConfig(raw, base_dir).validate()
