"""Experiment configuration: a single strict JSON document.

Relative paths inside the document are resolved against the directory of the
config file itself.  Unknown fields are rejected so that typos fail loudly
instead of silently running a default.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hamiltonian import HamiltonianFormatError, LocalHamiltonian, parse_hamiltonian
from .instrument import NOISE_KINDS, NoiseModel


class ConfigError(ValueError):
    """Raised for malformed or out-of-range experiment configuration."""


_TOP_FIELDS = {
    "hamiltonian_path", "beta", "epsilon", "k_variant", "schedule",
    "n_trajectories", "master_seed", "track_state", "noise",
    "output_path", "output_format", "workers",
}

_SCHEDULE_FIELDS = {"kind", "coefficients_path", "c"}
_NOISE_FIELDS = {"kind", "strength", "seed"}


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "cosh"
    coefficients_path: str | None = None
    c: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    hamiltonian_path: str
    beta: float
    epsilon: float
    output_path: str
    k_variant: str = "product"
    schedule: ScheduleSpec = ScheduleSpec()
    n_trajectories: int = 10000
    master_seed: int = 0
    track_state: bool = False
    noise: NoiseModel | None = None
    output_format: str = "json"
    workers: int = 1
    base_dir: Path = Path(".")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def load_hamiltonian(self) -> LocalHamiltonian:
        path = self.resolve(self.hamiltonian_path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"hamiltonian_path: cannot read {path}: {e}") from e
        try:
            return parse_hamiltonian(text)
        except HamiltonianFormatError as e:
            raise ConfigError(f"hamiltonian_path: {path}: {e}") from e

    def load_general_coefficients(self) -> np.ndarray:
        if self.schedule.kind != "general":
            raise ConfigError("schedule.coefficients_path only applies to the general kind")
        path = self.resolve(self.schedule.coefficients_path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"schedule.coefficients_path: cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"schedule.coefficients_path: {path}: malformed JSON: {e}") from e
        if isinstance(doc, dict):
            unknown = set(doc) - {"coefficients"}
            if unknown:
                raise ConfigError(f"coefficient file: unknown fields {sorted(unknown)}")
            doc = doc.get("coefficients")
        if not isinstance(doc, list) or not doc:
            raise ConfigError("coefficient file must hold a nonempty list of numbers")
        try:
            return np.asarray([float(x) for x in doc])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"coefficient file: {e}") from e

    def echo(self) -> dict:
        """Every result-affecting knob, for the run report."""
        sched: dict = {"kind": self.schedule.kind}
        if self.schedule.kind == "general":
            sched["coefficients_path"] = self.schedule.coefficients_path
            sched["c"] = self.schedule.c
        noise = None
        if self.noise is not None:
            noise = {"kind": self.noise.kind, "strength": self.noise.strength,
                     "seed": self.noise.seed}
        return {
            "hamiltonian_path": self.hamiltonian_path,
            "beta": self.beta,
            "epsilon": self.epsilon,
            "k_variant": self.k_variant,
            "schedule": sched,
            "n_trajectories": self.n_trajectories,
            "master_seed": self.master_seed,
            "track_state": self.track_state,
            "noise": noise,
            "output_path": self.output_path,
            "output_format": self.output_format,
        }


def _require(doc: dict, name: str):
    if name not in doc:
        raise ConfigError(f"missing required field: {name}")
    return doc[name]


def _as_real(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{name} must be a finite number, got {value!r}")
    return float(value)


def _as_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return value


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a config document, applying CLI overrides."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path}: malformed JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _TOP_FIELDS
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if overrides:
        doc.update({k: v for k, v in overrides.items() if v is not None})

    beta = _as_real(_require(doc, "beta"), "beta")
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    epsilon = _as_real(_require(doc, "epsilon"), "epsilon")
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}")

    k_variant = doc.get("k_variant", "product")
    if k_variant not in ("product", "ideal"):
        raise ConfigError(f"k_variant must be 'product' or 'ideal', got {k_variant!r}")

    sched_doc = doc.get("schedule", "cosh")
    if isinstance(sched_doc, str):
        sched_doc = {"kind": sched_doc}
    if not isinstance(sched_doc, dict):
        raise ConfigError("schedule must be a string or an object")
    unknown = set(sched_doc) - _SCHEDULE_FIELDS
    if unknown:
        raise ConfigError(f"schedule: unknown fields {sorted(unknown)}")
    kind = sched_doc.get("kind", "cosh")
    if kind not in ("cosh", "general"):
        raise ConfigError(f"schedule.kind must be 'cosh' or 'general', got {kind!r}")
    if kind == "general" and not sched_doc.get("coefficients_path"):
        raise ConfigError("schedule.kind = general requires coefficients_path")
    c_val = sched_doc.get("c")
    schedule = ScheduleSpec(
        kind=kind,
        coefficients_path=sched_doc.get("coefficients_path"),
        c=None if c_val is None else _as_real(c_val, "schedule.c"),
    )

    n_traj = _as_int(doc.get("n_trajectories", 10000), "n_trajectories")
    if n_traj < 1:
        raise ConfigError(f"n_trajectories must be >= 1, got {n_traj}")
    master_seed = _as_int(doc.get("master_seed", 0), "master_seed")
    track_state = doc.get("track_state", False)
    if not isinstance(track_state, bool):
        raise ConfigError(f"track_state must be a boolean, got {track_state!r}")

    noise = None
    noise_doc = doc.get("noise")
    if noise_doc is not None:
        if not isinstance(noise_doc, dict):
            raise ConfigError("noise must be an object")
        unknown = set(noise_doc) - _NOISE_FIELDS
        if unknown:
            raise ConfigError(f"noise: unknown fields {sorted(unknown)}")
        kind = _require(noise_doc, "kind")
        if kind not in NOISE_KINDS:
            raise ConfigError(f"noise.kind must be one of {NOISE_KINDS}, got {kind!r}")
        strength = _as_real(_require(noise_doc, "strength"), "noise.strength")
        seed = _as_int(noise_doc.get("seed", 0), "noise.seed")
        try:
            noise = NoiseModel(kind=kind, strength=strength, seed=seed)
        except ValueError as e:
            raise ConfigError(f"noise: {e}") from e

    output_format = doc.get("output_format", "json")
    if output_format not in ("json", "csv"):
        raise ConfigError(f"output_format must be 'json' or 'csv', got {output_format!r}")
    workers = _as_int(doc.get("workers", 1), "workers")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")

    cfg = ExperimentConfig(
        hamiltonian_path=str(_require(doc, "hamiltonian_path")),
        beta=beta,
        epsilon=epsilon,
        output_path=str(_require(doc, "output_path")),
        k_variant=k_variant,
        schedule=schedule,
        n_trajectories=n_traj,
        master_seed=master_seed,
        track_state=track_state,
        noise=noise,
        output_format=output_format,
        workers=workers,
        base_dir=path.parent,
    )
    cfg.load_hamiltonian()  # fail fast on unreadable/malformed references
    if schedule.kind == "general":
        cfg.load_general_coefficients()
    return cfg
