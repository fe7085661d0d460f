"""Exact algebra of delay-delta kernels.

A kernel is a finite sum ``sum_k w_k delta(x - d_k)``.  For a channel kernel
``x`` is ``t - nu``; for a commutator kernel it is ``t - t'``.  Every term also
carries the optical phase ``omega_a * d_k`` accumulated over its delay so the
Markov-approximated coefficients can be formed without a group velocity.

The commutator of two channels ``[b_a(t), b_b(t')^dag]`` is
``int a^*(t - nu) b(t' - nu) d nu``; a term ``(w_a, d_a)`` paired with
``(w_b, d_b)`` lands at ``t - t' = d_a - d_b`` with weight ``conj(w_a) w_b``.
"""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .network import Network, WaveguideKind, require_valid

DELAY_TOL = 1e-12
_PHASE_TOL = 1e-9


class Channel(str, enum.Enum):
    SEMI_TILDE = "semi-tilde"  # semi-infinite input noise channel b_in^(j)
    SEMI_OUTPUT = "semi-output"  # semi-infinite output kernel
    INF_LEFT = "inf-left"  # infinite, left-going output kernel
    INF_RIGHT = "inf-right"  # infinite, right-going output kernel
    INF_LEFT_INPUT = "inf-left-input"  # infinite, left-going input noise d_in^(j)
    INF_RIGHT_INPUT = "inf-right-input"  # infinite, right-going input noise c_in^(j)


_SEMI_CHANNELS = {Channel.SEMI_TILDE, Channel.SEMI_OUTPUT}


class ChannelMismatchError(ValueError):
    pass


class ItoHypothesisError(ValueError):
    """dt is not below the smallest mirror delay of a semi-infinite network."""


@dataclass(frozen=True)
class DeltaTerm:
    weight: complex
    delay: float
    phase: float = 0.0


def _same_phase(a: float, b: float) -> bool:
    return abs(cmath.exp(1j * a) - cmath.exp(1j * b)) < _PHASE_TOL


@dataclass(frozen=True)
class DelayKernel:
    """Sorted, merged, zero-pruned list of :class:`DeltaTerm`."""

    terms: tuple[DeltaTerm, ...] = ()

    @classmethod
    def from_terms(cls, terms: Iterable[DeltaTerm]) -> "DelayKernel":
        ordered = sorted(terms, key=lambda t: t.delay)
        groups: list[list[DeltaTerm]] = []
        for term in ordered:
            # delays within DELAY_TOL of the group's first member merge
            placed = False
            for g in reversed(groups):
                if term.delay - g[0].delay >= DELAY_TOL:
                    break
                if _same_phase(g[0].phase, term.phase):
                    g.append(term)
                    placed = True
                    break
            if not placed:
                groups.append([term])
        merged = []
        for g in groups:
            w = sum(t.weight for t in g)
            if w != 0:
                merged.append(DeltaTerm(complex(w), g[0].delay, g[0].phase))
        return cls(tuple(merged))

    def __add__(self, other: "DelayKernel") -> "DelayKernel":
        return DelayKernel.from_terms(self.terms + other.terms)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def is_empty(self) -> bool:
        return not self.terms

    def scaled(self, s: complex) -> "DelayKernel":
        return DelayKernel.from_terms(DeltaTerm(s * t.weight, t.delay, t.phase) for t in self.terms)

    def weight_at(self, delay: float, tol: float = DELAY_TOL) -> complex:
        return complex(sum(t.weight for t in self.terms if abs(t.delay - delay) < tol))

    def delayed_terms(self) -> list[DeltaTerm]:
        return [t for t in self.terms if abs(t.delay) >= DELAY_TOL]

    def markov_weight(self, omega_a: float | None = None) -> complex:
        """Phase-folded total weight ``sum_k w_k exp(i omega_a d_k)``."""
        return complex(sum(t.weight * _phase_factor(t, omega_a) for t in self.terms))

    def __str__(self):
        if not self.terms:
            return "0"
        return " + ".join(
            f"({t.weight.real:.6g}{t.weight.imag:+.6g}j)·δ(x{-t.delay:+.6g})" for t in self.terms
        )


def _phase_factor(term: DeltaTerm, omega_a: float | None) -> complex:
    return cmath.exp(1j * (term.phase if omega_a is None else omega_a * term.delay))


def channel_kernel(net: Network, j: int, channel: Channel | str) -> DelayKernel:
    """Delay kernel of atom ``j`` (1-based) for the given field channel.

    Sums over every coupling point of the atom.
    """
    require_valid(net)
    channel = Channel(channel)
    semi = net.kind is WaveguideKind.SEMI_INFINITE
    if (channel in _SEMI_CHANNELS) != semi:
        raise ChannelMismatchError(f"channel {channel.value} not available on a {net.kind.value} waveguide")
    atom = net.atoms[j - 1]
    terms = []
    for p in atom.points:
        sL, sR = math.sqrt(p.gammaL), math.sqrt(p.gammaR)
        if channel is Channel.SEMI_TILDE:
            terms += [DeltaTerm(sR, p.tau, p.phi), DeltaTerm(-sL, -p.tau, -p.phi)]
        elif channel is Channel.SEMI_OUTPUT:
            terms += [DeltaTerm(sL, p.tau, p.phi), DeltaTerm(-sR, -p.tau, -p.phi)]
        elif channel is Channel.INF_LEFT:
            terms.append(DeltaTerm(sL, p.tau, p.phi))
        elif channel is Channel.INF_RIGHT:
            terms.append(DeltaTerm(sR, -p.tau, -p.phi))
        elif channel is Channel.INF_LEFT_INPUT:
            terms.append(DeltaTerm(sL, -p.tau, -p.phi))
        else:
            terms.append(DeltaTerm(sR, p.tau, p.phi))
    return DelayKernel.from_terms(terms)


def commutator_kernel(a: DelayKernel, b: DelayKernel) -> DelayKernel:
    """Kernel in ``t - t'`` of ``[b_a(t), b_b(t')^dag]`` for channel kernels a, b."""
    return DelayKernel.from_terms(
        DeltaTerm(ta.weight.conjugate() * tb.weight, ta.delay - tb.delay, ta.phase - tb.phase)
        for ta in a.terms
        for tb in b.terms
    )


def input_channels(net: Network) -> tuple[Channel, ...]:
    if net.kind is WaveguideKind.SEMI_INFINITE:
        return (Channel.SEMI_TILDE,)
    return (Channel.INF_RIGHT_INPUT, Channel.INF_LEFT_INPUT)


def noise_commutator(net: Network, j: int, l: int) -> DelayKernel:
    """Commutator kernel of the total input noise seen by atoms j and l.

    Left- and right-going fields of an infinite waveguide commute with each
    other, so only like-direction pairs contribute.
    """
    total = DelayKernel()
    for ch in input_channels(net):
        total = total + commutator_kernel(channel_kernel(net, j, ch), channel_kernel(net, l, ch))
    return total


def commutator_table(net: Network) -> dict[tuple[int, int], DelayKernel]:
    require_valid(net)
    n = net.n_atoms
    return {(j, l): noise_commutator(net, j, l) for j in range(1, n + 1) for l in range(1, n + 1)}


@dataclass(frozen=True)
class MarkovianityVerdict:
    markovian: bool
    reason: str
    witness: tuple[int, int, DeltaTerm] | None = None

    def __bool__(self):
        return self.markovian


def is_markovian(net: Network) -> MarkovianityVerdict:
    """Markovian iff no pairwise noise commutator has a delayed delta term.

    The witness for a non-Markovian network is the first pair (in row-major
    order) with a delayed term, preferring a positive (causal) delay.
    """
    table = commutator_table(net)
    for (j, l), kern in table.items():
        delayed = kern.delayed_terms()
        if delayed:
            causal = [t for t in delayed if t.delay > 0]
            term = (causal or delayed)[0]
            return MarkovianityVerdict(
                False,
                f"[b_{j}(t), b_{l}^dag(t')] has a delayed term at t-t' = {term.delay:.6g} us",
                (j, l, term),
            )
    return MarkovianityVerdict(True, "all noise commutators are proportional to delta(t-t')")


@dataclass(frozen=True)
class ItoTable:
    """Coefficients of ``dt`` in ``dB_j dB_l^dag`` for every channel pair."""

    n: int
    entries: np.ndarray
    dt: float

    # dB dB, dB^dag dB^dag and dB^dag dB vanish on the vacuum
    ZERO_PRODUCTS = (("dB", "dB"), ("dB+", "dB+"), ("dB+", "dB"))

    def rate(self, j: int, l: int, first: str = "dB", second: str = "dB+") -> complex:
        if (first, second) == ("dB", "dB+"):
            return complex(self.entries[j - 1, l - 1])
        if (first, second) in self.ZERO_PRODUCTS:
            return 0j
        raise ValueError(f"unknown increment pair {(first, second)}")


def ito_table(net: Network, dt: float, direction: str | None = None) -> ItoTable:
    """Non-Markovian Ito table for step ``dt``.

    Entry (j, l) sums the commutator-kernel weights whose delay satisfies
    ``|d| <= dt``.  ``direction`` ('right' or 'left') restricts an infinite
    waveguide to one propagation direction; by default both are summed.
    """
    require_valid(net)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if net.kind is WaveguideKind.SEMI_INFINITE:
        tau_min = min(p.tau for a in net.atoms for p in a.points)
        if dt >= tau_min:
            raise ItoHypothesisError(f"dt = {dt} must be below the smallest mirror delay {tau_min}")
        if direction is not None:
            raise ChannelMismatchError("direction only applies to an infinite waveguide")
        channels = (Channel.SEMI_TILDE,)
    elif direction is None:
        channels = input_channels(net)
    else:
        channels = ({"right": Channel.INF_RIGHT_INPUT, "left": Channel.INF_LEFT_INPUT}[direction],)
    n = net.n_atoms
    entries = np.zeros((n, n), dtype=complex)
    for j in range(1, n + 1):
        for l in range(1, n + 1):
            for ch in channels:
                kern = commutator_kernel(channel_kernel(net, j, ch), channel_kernel(net, l, ch))
                entries[j - 1, l - 1] += sum(t.weight for t in kern if abs(t.delay) <= dt + DELAY_TOL)
    return ItoTable(n, entries, dt)


@dataclass(frozen=True)
class CoefficientTable:
    """Integrated Markov kernels ``int_0^t m_jl(t - tau) d tau`` per pair.

    ``entries[(j, l)]`` (1-based) lists ``(amplitude, activation)`` pairs; the
    coefficient at time t sums the amplitudes whose activation is ``<= t``.
    """

    n: int
    entries: dict = field(default_factory=dict)

    def value(self, j: int, l: int, t: float = math.inf) -> complex:
        return complex(sum(a for a, t0 in self.entries.get((j, l), ()) if t0 <= t))

    def matrix(self, t: float = math.inf) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=complex)
        for (j, l), items in self.entries.items():
            m[j - 1, l - 1] = sum(a for a, t0 in items if t0 <= t)
        return m

    def activations(self) -> list[float]:
        return sorted({t0 for items in self.entries.values() for _, t0 in items})

    def activation_state(self, t: float) -> tuple:
        """Hashable key that changes exactly when ``matrix(t)`` can change."""
        return tuple(t0 <= t for t0 in self.activations())

    def scaled(self, s: float) -> "CoefficientTable":
        return CoefficientTable(self.n, {k: [(s * a, t0) for a, t0 in v] for k, v in self.entries.items()})

    @classmethod
    def constant(cls, matrix: np.ndarray) -> "CoefficientTable":
        matrix = np.asarray(matrix, dtype=complex)
        n = matrix.shape[0]
        return cls(n, {(j + 1, l + 1): [(complex(matrix[j, l]), 0.0)] for j in range(n) for l in range(n) if matrix[j, l] != 0})


def gauge_coefficients(net: Network, omega_a: float | None = None) -> CoefficientTable:
    """Markov-approximated Lindblad coefficients of every atom pair.

    A commutator term ``(w, d)`` with ``d > 0`` contributes
    ``w exp(i omega_a d)`` from ``t = d`` on; the ``d = 0`` term contributes
    half its weight from the start; negative delays fall outside the
    integration range.  Without ``omega_a`` the phases carried by the kernel
    terms are used.
    """
    table = commutator_table(net)
    entries = {}
    for (j, l), kern in table.items():
        items = []
        for t in kern:
            if t.delay <= -DELAY_TOL:
                continue
            if abs(t.delay) < DELAY_TOL:
                items.append((0.5 * t.weight * _phase_factor(t, omega_a), 0.0))
            else:
                items.append((t.weight * _phase_factor(t, omega_a), t.delay))
        if items:
            entries[(j, l)] = items
    return CoefficientTable(net.n_atoms, entries)


def kernel_records(kern: DelayKernel) -> list[dict]:
    return [
        {"weight_re": t.weight.real, "weight_im": t.weight.imag, "delay": t.delay, "phase": t.phase}
        for t in kern
    ]


def format_kernel_table(items: Sequence[tuple[str, DelayKernel]]) -> str:
    width = max((len(label) for label, _ in items), default=0)
    lines = []
    for label, kern in items:
        if kern.is_empty():
            lines.append(f"{label:<{width}}  (empty)")
            continue
        for k, t in enumerate(kern):
            head = label if k == 0 else ""
            lines.append(
                f"{head:<{width}}  delay {t.delay:+12.6f} us   weight {t.weight.real:+.8f}{t.weight.imag:+.8f}j"
            )
    return "\n".join(lines)
