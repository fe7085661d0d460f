"""Output-field relations and multi-point versus single-point equivalence."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import Channel, DelayKernel, channel_kernel
from .network import Atom, InvalidNetworkError, Network, Port, WaveguideKind, require_valid

EQUIVALENCE_TOL = 1e-10

_PORT_CHANNEL = {
    Port.SEMI_INFINITE_END: Channel.SEMI_OUTPUT,
    Port.INFINITE_LEFT: Channel.INF_LEFT,
    Port.INFINITE_RIGHT: Channel.INF_RIGHT,
}


@dataclass(frozen=True)
class OutputRelation:
    """Exact emission kernel and Markov weight of every atom at one port."""

    port: Port
    kernels: dict[int, DelayKernel]
    weights: dict[int, complex]


def output_relation(net: Network, port: Port | str | None = None) -> OutputRelation:
    require_valid(net)
    port = Port(net.port if port is None else port)
    if (port is Port.SEMI_INFINITE_END) != (net.kind is WaveguideKind.SEMI_INFINITE):
        raise InvalidNetworkError([f"port/topology mismatch: port {port.value} on a {net.kind.value} waveguide"])
    channel = _PORT_CHANNEL[port]
    kernels = {j: channel_kernel(net, j, channel) for j in range(1, net.n_atoms + 1)}
    return OutputRelation(port, kernels, {j: k.markov_weight() for j, k in kernels.items()})


@dataclass(frozen=True)
class EquivalenceResult:
    equivalent: bool
    residuals: np.ndarray

    @property
    def verdict(self) -> str:
        return "Equivalent" if self.equivalent else "NotEquivalent"

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0


def _semi_conditions(atom: Atom) -> np.ndarray:
    s = c = 0.0
    for p in atom.points:
        sl, sr = math.sqrt(p.gammaL), math.sqrt(p.gammaR)
        s += (sl + sr) * math.sin(p.phi)
        c += (sl - sr) * math.cos(p.phi)
    return np.array([s, c])


def _infinite_conditions(atom: Atom) -> np.ndarray:
    left = sum(math.sqrt(p.gammaL) * np.exp(1j * p.phi) for p in atom.points)
    right = sum(math.sqrt(p.gammaR) * np.exp(-1j * p.phi) for p in atom.points)
    return np.array([left, right], dtype=complex)


def equivalence_check(multi: Atom, single: Atom, kind: WaveguideKind | str) -> EquivalenceResult:
    """Do ``multi`` and ``single`` produce the same Markov-approximated output?

    Semi-infinite: the sine and cosine conditions (two real residuals).
    Infinite: left and right complex amplitude conditions (two complex
    residuals).  Equivalent iff every residual is below 1e-10 in magnitude.
    """
    kind = WaveguideKind(kind)
    for atom in (multi, single):
        if not atom.points:
            raise InvalidNetworkError(["atom needs at least one coupling point"])
    cond = _semi_conditions if kind is WaveguideKind.SEMI_INFINITE else _infinite_conditions
    res = cond(single) - cond(multi)
    return EquivalenceResult(bool(np.max(np.abs(res)) < EQUIVALENCE_TOL), res)
