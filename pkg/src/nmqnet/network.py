"""Physical description of an atom network coupled to a waveguide.

Units throughout the package: rates in MHz, times in microseconds, phases in
radians.  A coupling point is stored as the pair (tau, phi) where ``tau`` is
the propagation delay from the reference point (the mirror for a
semi-infinite waveguide) and ``phi`` the accumulated optical phase
``omega_a * tau``.  Storing both keeps presets that only specify phases
usable without fixing a group velocity.
"""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union


class WaveguideKind(str, enum.Enum):
    SEMI_INFINITE = "semi-infinite"
    INFINITE = "infinite"


class Port(str, enum.Enum):
    SEMI_INFINITE_END = "semi-infinite-end"
    INFINITE_LEFT = "infinite-left"
    INFINITE_RIGHT = "infinite-right"


class InvalidNetworkError(ValueError):
    """Raised when an operation needs a valid network and gets a broken one."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid network: " + "; ".join(self.violations))


Drive = Union[float, Callable[[float], float]]


@dataclass(frozen=True)
class CouplingPoint:
    tau: float
    phi: float
    gammaL: float
    gammaR: float


@dataclass(frozen=True)
class Atom:
    points: tuple[CouplingPoint, ...]
    omega_a: float = 1.0
    eta: float = 0.0
    # a float, or a callable t -> amplitude for time-dependent drives
    drive_amplitude: Drive = 0.0

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def first_delay(self) -> float:
        return self.points[0].tau if self.points else 0.0

    def drive_at(self, t: float) -> float:
        if callable(self.drive_amplitude):
            return float(self.drive_amplitude(t))
        return float(self.drive_amplitude)

    @classmethod
    def single(cls, tau, phi, gammaL, gammaR, **kwargs) -> "Atom":
        """Atom coupled to the waveguide at a single point."""
        return cls(points=(CouplingPoint(tau, phi, gammaL, gammaR),), **kwargs)


@dataclass(frozen=True)
class Network:
    kind: WaveguideKind
    atoms: tuple[Atom, ...]
    port: Port
    # when set, every point must satisfy |phi - omega_a * tau| < this value
    phase_tolerance: float | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "kind", WaveguideKind(self.kind))
        object.__setattr__(self, "port", Port(self.port))
        object.__setattr__(self, "atoms", tuple(self.atoms))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def dim(self) -> int:
        return 2 ** len(self.atoms)

    def with_atoms(self, atoms) -> "Network":
        return Network(self.kind, tuple(atoms), self.port, self.phase_tolerance)


def _check_point(j: int, n: int, p: CouplingPoint, atom: Atom, tol) -> list[str]:
    out = []
    where = f"atom {j} point {n}"
    for name in ("tau", "phi", "gammaL", "gammaR"):
        if not math.isfinite(getattr(p, name)):
            out.append(f"{where}: {name} must be finite")
    if p.tau < 0:
        out.append(f"{where}: tau must be non-negative (got {p.tau})")
    if p.gammaL < 0:
        out.append(f"{where}: gammaL must be non-negative (got {p.gammaL})")
    if p.gammaR < 0:
        out.append(f"{where}: gammaR must be non-negative (got {p.gammaR})")
    if tol is not None and abs(p.phi - atom.omega_a * p.tau) >= tol:
        out.append(
            f"{where}: phase {p.phi} inconsistent with omega_a*tau = "
            f"{atom.omega_a * p.tau}"
        )
    return out


def validate(net: Network) -> list[str]:
    """Return every invariant violation of ``net``; an empty list means valid."""
    problems: list[str] = []
    try:
        kind = WaveguideKind(net.kind)
        port = Port(net.port)
    except ValueError as exc:
        return [str(exc)]
    if (port is Port.SEMI_INFINITE_END) != (kind is WaveguideKind.SEMI_INFINITE):
        problems.append(
            f"port/topology mismatch: port {port.value} cannot be used with a "
            f"{kind.value} waveguide"
        )
    if not net.atoms:
        problems.append("network has no atoms")
    for j, atom in enumerate(net.atoms, start=1):
        if atom.eta < 0:
            problems.append(f"atom {j}: eta must be non-negative (got {atom.eta})")
        if not atom.points:
            problems.append(f"atom {j}: needs at least one coupling point")
            continue
        for n, p in enumerate(atom.points, start=1):
            problems.extend(_check_point(j, n, p, atom, net.phase_tolerance))
        delays = [p.tau for p in atom.points]
        if any(b <= a for a, b in zip(delays, delays[1:])):
            problems.append(f"atom {j}: coupling-point delays must be strictly increasing")
    firsts = [a.first_delay for a in net.atoms if a.points]
    if any(b < a for a, b in zip(firsts, firsts[1:])):
        problems.append("atoms must be ordered by non-decreasing (first) delay")
    return problems


def require_valid(net: Network) -> None:
    problems = validate(net)
    if problems:
        raise InvalidNetworkError(problems)


def point_weight(p: CouplingPoint, port: Port) -> complex:
    """Markov-approximated output amplitude of one coupling point at ``port``."""
    port = Port(port)
    if port is Port.SEMI_INFINITE_END:
        return math.sqrt(p.gammaL) * cmath.exp(1j * p.phi) - math.sqrt(
            p.gammaR
        ) * cmath.exp(-1j * p.phi)
    if port is Port.INFINITE_LEFT:
        return math.sqrt(p.gammaL) * cmath.exp(1j * p.phi)
    return math.sqrt(p.gammaR) * cmath.exp(-1j * p.phi)


def coupling_operator_weights(net: Network, port: Port | None = None) -> list[tuple[int, complex]]:
    """Weights ``l_j`` of the measured collapse operator ``sum_j l_j sigma_j^-``.

    Atom indices are 1-based.  ``port`` defaults to the network's own
    measurement port.
    """
    require_valid(net)
    port = Port(net.port if port is None else port)
    if (port is Port.SEMI_INFINITE_END) != (net.kind is WaveguideKind.SEMI_INFINITE):
        raise InvalidNetworkError([f"port {port.value} incompatible with {net.kind.value}"])
    return [
        (j, sum(point_weight(p, port) for p in atom.points))
        for j, atom in enumerate(net.atoms, start=1)
    ]
