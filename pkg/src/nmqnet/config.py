"""Run configuration, compiled-in scenario presets and config-file loading.

A config file is YAML or JSON.  It either spells out a full configuration or
names a preset and overrides some of its fields:

    preset: fig2b
    trajectories: 5000
    seed: 7

Networks are written as plain mappings; see :func:`network_to_dict`.
Figure presets split each 0.5 us output step into 8 RK4 steps, which keeps
the minimum eigenvalue of the deterministic state above -1e-6.  Preset
delays use a nominal resonant frequency of 1 rad/us, so every delay
equals its phase.  Delays only enter classification and Ito tables; the
Markov-approximated dynamics depend on the phases alone.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import operators as ops
from .network import Atom, CouplingPoint, Network, validate

EXPERIMENTS = ("classify", "kernels", "simulate", "filter", "equivalence")
MODES = ("instant-on", "activated")
PI = math.pi


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    experiment: str
    network: dict
    initial_state: str | None = None
    dt: float = 0.5
    t_end: float = 50.0
    substeps: int = 1
    trajectories: int = 2000
    seed: int = 0
    workers: int = 1
    mode: str = "instant-on"
    exchange: bool = False
    strict_positivity: bool = False
    observables: list[str] | None = None
    equivalence: dict | None = None
    out_dir: str | None = None
    name: str = "run"

    def to_dict(self) -> dict:
        return copy.deepcopy(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls(**copy.deepcopy(data))
        problems = cfg.problems()
        if problems:
            raise ConfigError(problems)
        return cfg

    def build_network(self) -> Network:
        return network_from_dict(self.network)

    def rho0(self) -> np.ndarray:
        return ops.projector(self.initial_state)

    def problems(self) -> list[str]:
        out = []
        if self.experiment not in EXPERIMENTS:
            out.append(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not (isinstance(self.dt, (int, float)) and self.dt > 0):
            out.append(f"dt must be positive (got {self.dt})")
        elif not (isinstance(self.t_end, (int, float)) and self.t_end >= self.dt):
            out.append(f"t_end must be at least dt (got t_end={self.t_end}, dt={self.dt})")
        if not (isinstance(self.substeps, int) and self.substeps >= 1):
            out.append(f"substeps must be a positive integer (got {self.substeps})")
        if not (isinstance(self.trajectories, int) and self.trajectories >= 1):
            out.append(f"trajectories must be a positive integer (got {self.trajectories})")
        if not isinstance(self.seed, int) or self.seed < 0:
            out.append(f"seed must be a non-negative integer (got {self.seed})")
        if not (isinstance(self.workers, int) and self.workers >= 1):
            out.append(f"workers must be a positive integer (got {self.workers})")
        if self.mode not in MODES:
            out.append(f"mode must be one of {MODES}, got {self.mode!r}")
        net = None
        try:
            net = network_from_dict(self.network)
        except ConfigError as exc:
            out.extend(exc.problems)
        if net is not None:
            out.extend(validate(net))
        if self.experiment in ("simulate", "filter"):
            s = self.initial_state
            if not isinstance(s, str) or set(s) - {"e", "g"} or not s:
                out.append(f"initial_state must be a string of 'e'/'g' (got {s!r})")
            elif net is not None and len(s) != net.n_atoms:
                out.append(f"initial_state {s!r} has {len(s)} atoms, network has {net.n_atoms}")
        if self.experiment == "equivalence":
            eq = self.equivalence
            if not isinstance(eq, dict) or set(eq) != {"multi", "single"}:
                out.append("equivalence needs 'multi' and 'single' atom entries")
            else:
                for key in ("multi", "single"):
                    try:
                        atom_from_dict(eq[key], f"equivalence.{key}")
                    except ConfigError as exc:
                        out.extend(exc.problems)
        return out


_POINT_KEYS = ("tau", "phi", "gammaL", "gammaR")
_ATOM_KEYS = {"points", "omega_a", "eta", "drive"}
_NET_KEYS = {"kind", "port", "atoms", "phase_tolerance"}


def _number(value, where, problems):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append(f"{where} must be a number (got {value!r})")
        return 0.0
    return float(value)


def atom_from_dict(data, where: str = "atom") -> Atom:
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    for key in set(data) - _ATOM_KEYS:
        problems.append(f"{where}: unknown field {key!r}")
    points = []
    raw_points = data.get("points")
    if not isinstance(raw_points, list):
        problems.append(f"{where}.points must be a list")
        raw_points = []
    for n, p in enumerate(raw_points, start=1):
        pw = f"{where}.points[{n}]"
        if not isinstance(p, dict):
            problems.append(f"{pw} must be a mapping")
            continue
        for key in set(p) - set(_POINT_KEYS):
            problems.append(f"{pw}: unknown field {key!r}")
        missing = [k for k in _POINT_KEYS if k not in p]
        if missing:
            problems.append(f"{pw}: missing {', '.join(missing)}")
            continue
        points.append(CouplingPoint(*(_number(p[k], f"{pw}.{k}", problems) for k in _POINT_KEYS)))
    kw = {}
    for key, name in (("omega_a", "omega_a"), ("eta", "eta"), ("drive", "drive_amplitude")):
        if key in data:
            kw[name] = _number(data[key], f"{where}.{key}", problems)
    if problems:
        raise ConfigError(problems)
    return Atom(tuple(points), **kw)


def network_from_dict(data) -> Network:
    if not isinstance(data, dict):
        raise ConfigError("network must be a mapping")
    problems = [f"network: unknown field {k!r}" for k in set(data) - _NET_KEYS]
    for key in ("kind", "port", "atoms"):
        if key not in data:
            problems.append(f"network: missing {key!r}")
    atoms = []
    for j, a in enumerate(data.get("atoms") or [], start=1):
        try:
            atoms.append(atom_from_dict(a, f"network.atoms[{j}]"))
        except ConfigError as exc:
            problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    try:
        return Network(data["kind"], tuple(atoms), data["port"], data.get("phase_tolerance"))
    except ValueError as exc:
        raise ConfigError(f"network: {exc}") from None


def atom_to_dict(atom: Atom) -> dict:
    if callable(atom.drive_amplitude):
        raise ConfigError("time-dependent drives cannot be serialized")
    return {
        "points": [{k: getattr(p, k) for k in _POINT_KEYS} for p in atom.points],
        "omega_a": atom.omega_a,
        "eta": atom.eta,
        "drive": atom.drive_amplitude,
    }


def network_to_dict(net: Network) -> dict:
    return {
        "kind": net.kind.value,
        "port": net.port.value,
        "atoms": [atom_to_dict(a) for a in net.atoms],
        "phase_tolerance": net.phase_tolerance,
    }


def _point(phi, gamma_l, gamma_r, tau=None):
    return {"tau": phi if tau is None else tau, "phi": phi, "gammaL": gamma_l, "gammaR": gamma_r}


def _atom(points, eta=0.0, drive=0.0):
    return {"points": points, "omega_a": 1.0, "eta": eta, "drive": drive}


def _fig2(name, drives, phis):
    net = {
        "kind": "semi-infinite",
        "port": "semi-infinite-end",
        "atoms": [
            _atom([_point(phis[0], 0.2, 0.2)], drive=drives[0]),
            _atom([_point(phis[1], 0.4, 0.4)], drive=drives[1]),
        ],
        "phase_tolerance": None,
    }
    return RunConfig(
        "filter", net, "eg", substeps=8, observables=["alpha_sq", "beta_sq", "sz1", "sz2"], name=name, seed=2024
    )


def _fig3(name, eta):
    atoms = [
        _atom([_point(k * PI, g, g)], eta=eta, drive=0.5 if k == 2 else 0.0)
        for k, g in ((1, 0.1), (2, 0.2), (3, 0.3))
    ]
    net = {"kind": "infinite", "port": "infinite-right", "atoms": atoms, "phase_tolerance": None}
    return RunConfig("filter", net, "egg", substeps=8, exchange=True, observables=["sz1", "sz2", "sz3"], name=name, seed=2024)


def _single_atom():
    net = {
        "kind": "semi-infinite",
        "port": "semi-infinite-end",
        "atoms": [_atom([_point(1.0, 0.0, 0.2)])],
        "phase_tolerance": None,
    }
    return RunConfig("simulate", net, "e", t_end=25.0, observables=["pop1", "sz1"], name="single-atom")


def _giant_atom():
    phi, g = 0.3 * PI, 0.05
    multi = _atom([_point(phi, g, g), _point(phi + 2 * PI, g, g)])
    single = _atom([_point(phi, (2 * math.sqrt(g)) ** 2, (2 * math.sqrt(g)) ** 2)])
    net = {"kind": "infinite", "port": "infinite-right", "atoms": [multi], "phase_tolerance": None}
    return RunConfig("equivalence", net, equivalence={"multi": multi, "single": single}, name="giant-atom")


_PRESETS = {
    "fig2a": lambda: _fig2("fig2a", (0.1, 0.0), (0.3 * PI, 1.3 * PI)),
    "fig2b": lambda: _fig2("fig2b", (0.0, 0.2), (0.3 * PI, 0.8 * PI)),
    "fig3a": lambda: _fig3("fig3a", 0.0),
    "fig3b": lambda: _fig3("fig3b", 0.2),
    "single-atom": _single_atom,
    "giant-atom": _giant_atom,
}

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str) -> RunConfig:
    """Fresh copy of a compiled-in preset."""
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}") from None


def _parse(path: Path):
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: {problem}") from None


def config_from_mapping(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]  # a JSON run summary
    data = dict(data)
    base = {}
    if "preset" in data:
        base = preset(data.pop("preset")).to_dict()
    merged = {**base, **data}
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    problems = [f"unknown field {k!r}" for k in sorted(set(merged) - fields)]
    for key in ("experiment", "network"):
        if key not in merged:
            problems.append(f"missing field {key!r}")
    if problems:
        raise ConfigError(problems)
    return RunConfig.from_dict(merged)


def load_config(path) -> RunConfig:
    """Read and validate a YAML/JSON config, a preset reference or a run summary."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file")
    return config_from_mapping(_parse(path))
