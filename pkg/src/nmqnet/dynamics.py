"""Unconditional master-equation dynamics in the Markov approximation.

The generator is

    drho/dt = -i[H, rho] + sum_jl ( M_jl [L_l rho, L_j^dag]
                                    + M_jl^* [L_j, rho L_l^dag] )
              + sum_j eta_j D[L_j] rho

with ``L_j = sigma_j^-`` and ``M`` the integrated kernel matrix from
:func:`nmqnet.kernels.gauge_coefficients`.  The same generator can be split
into a coherent exchange Hamiltonian plus a Hermitian-matrix Lindblad
dissipator (``exchange=True``); both forms are algebraically identical.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import operators as ops
from .kernels import CoefficientTable, gauge_coefficients
from .network import Network, require_valid

log = logging.getLogger(__name__)

MODES = ("instant-on", "activated")


class AssumptionError(ValueError):
    """The network breaks an assumption of the Markov approximation."""


class InvariantViolation(RuntimeError):
    def __init__(self, step: int, time: float, reasons):
        self.step, self.time, self.reasons = step, time, list(reasons)
        super().__init__(f"step {step} (t = {time:g} us): " + "; ".join(self.reasons))


def check_identical_frequencies(net: Network, rtol: float = 1e-12) -> float:
    freqs = [a.omega_a for a in net.atoms]
    w0 = freqs[0]
    if any(abs(w - w0) > rtol * max(abs(w0), 1.0) for w in freqs):
        raise AssumptionError(f"atoms must share one resonant frequency, got {freqs}")
    return w0


def exchange_coefficients(m: np.ndarray) -> np.ndarray:
    """``h_jl`` of the coherent part ``sum_jl h_jl sigma_j^+ sigma_l^-`` of M."""
    return (m - m.conj().T) / 2j


def exchange_hamiltonian(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    h = exchange_coefficients(m)
    low = ops.lowering_ops(n)
    out = np.zeros((2**n, 2**n), dtype=complex)
    for j in range(n):
        for l in range(n):
            if h[j, l] != 0:
                out += h[j, l] * (low[j].conj().T @ low[l])
    return out


def drive_hamiltonian(net: Network, t: float = 0.0) -> np.ndarray:
    n = net.n_atoms
    out = np.zeros((2**n, 2**n), dtype=complex)
    for j, atom in enumerate(net.atoms, start=1):
        omega = atom.drive_at(t)
        if omega:
            out += omega * ops.sigma(j, "x", n)
    return out


def build_hamiltonian(net: Network, t: float = 0.0, exchange: bool = False, coefficients=None) -> np.ndarray:
    """Rotating-frame Hamiltonian: resonant drives, optionally plus exchange.

    With ``exchange`` the coherent part of the kernel matrix (constant,
    fully activated coefficients unless ``coefficients`` is given) is added.
    """
    require_valid(net)
    check_identical_frequencies(net)
    h = drive_hamiltonian(net, t)
    if exchange:
        m = gauge_coefficients(net).matrix() if coefficients is None else np.asarray(coefficients)
        h = h + exchange_hamiltonian(m)
    return h


def master_rhs(rho, h, m, etas=None, exchange: bool = False) -> np.ndarray:
    """Right-hand side of the Markov-approximated master equation."""
    n = m.shape[0]
    low = ops.lowering_ops(n)
    if exchange:
        h = h + exchange_hamiltonian(m)
    out = -1j * (h @ rho - rho @ h)
    for j in range(n):
        lj_d = low[j].conj().T
        for l in range(n):
            if exchange:
                # G_lj = M_jl + M_lj^* multiplies L_l rho L_j^dag - {L_j^dag L_l, rho}/2
                g = m[j, l] + np.conj(m[l, j])
                if g != 0:
                    ljl = lj_d @ low[l]
                    out += g * (low[l] @ rho @ lj_d - 0.5 * (ljl @ rho + rho @ ljl))
                continue
            mjl = m[j, l]
            if mjl == 0:
                continue
            ll_d = low[l].conj().T
            lr = low[l] @ rho
            out += mjl * (lr @ lj_d - lj_d @ lr)
            rl = rho @ ll_d
            out += np.conj(mjl) * (low[j] @ rl - rl @ low[j])
    if etas is not None:
        for j, eta in enumerate(etas):
            if eta:
                out += eta * ops.dissipator(low[j], rho)
    return out


def _spre(a):
    return np.kron(a, np.eye(a.shape[0]))


def _spost(a):
    return np.kron(np.eye(a.shape[0]), a.T)


def liouvillian(h, m, etas=None, exchange: bool = False) -> np.ndarray:
    """Superoperator of :func:`master_rhs` acting on row-major ``rho.ravel()``."""
    n = m.shape[0]
    low = ops.lowering_ops(n)
    if exchange:
        h = h + exchange_hamiltonian(m)
    sup = -1j * (_spre(h) - _spost(h))
    for j in range(n):
        lj_d = low[j].conj().T
        for l in range(n):
            ll_d = low[l].conj().T
            if exchange:
                g = m[j, l] + np.conj(m[l, j])
                if g != 0:
                    ljl = lj_d @ low[l]
                    sup += g * (np.kron(low[l], lj_d.T) - 0.5 * (_spre(ljl) + _spost(ljl)))
                continue
            mjl = m[j, l]
            if mjl == 0:
                continue
            sup += mjl * (np.kron(low[l], lj_d.T) - _spre(lj_d @ low[l]))
            sup += np.conj(mjl) * (np.kron(low[j], ll_d.T) - _spost(ll_d @ low[j]))
    if etas is not None:
        for j, eta in enumerate(etas):
            if eta:
                sup += eta * dissipator_superop(low[j])
    return sup


def dissipator_superop(op: np.ndarray) -> np.ndarray:
    """Superoperator of ``D[op]`` on row-major ``rho.ravel()``."""
    od = op.conj().T
    return np.kron(op, od.T) - 0.5 * (_spre(od @ op) + _spost(od @ op))


def rk4_propagator(l1, l2, l3, dt) -> np.ndarray:
    """Matrix of one classical RK4 step for ``x' = L(t) x``.

    ``l1``, ``l2``, ``l3`` are the generators at t, t + dt/2 and t + dt.
    """
    eye = np.eye(l1.shape[0], dtype=complex)
    k1 = l1
    k2 = l2 @ (eye + 0.5 * dt * k1)
    k3 = l2 @ (eye + 0.5 * dt * k2)
    k4 = l3 @ (eye + dt * k3)
    return eye + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_step(rhs: Callable, t: float, y, dt: float):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def time_grid(t_end: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_end < dt:
        raise ValueError("t_end must be at least dt")
    n = int(round(t_end / dt))
    return np.arange(n + 1) * dt


class Generator:
    """Time-dependent Liouvillian of a network with cached RK4 propagators."""

    def __init__(self, net: Network, mode: str = "instant-on", exchange: bool = False, substeps: int = 1):
        require_valid(net)
        if substeps < 1:
            raise ValueError("substeps must be at least 1")
        self.substeps = int(substeps)
        check_identical_frequencies(net)
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.net = net
        self.mode = mode
        self.exchange = exchange
        self.table: CoefficientTable = gauge_coefficients(net)
        self.etas = np.array([a.eta for a in net.atoms])
        self._static_drive = not any(callable(a.drive_amplitude) for a in net.atoms)
        self._cache: dict = {}

    def coefficients(self, t: float) -> np.ndarray:
        return self.table.matrix(math.inf if self.mode == "instant-on" else t)

    def hamiltonian(self, t: float) -> np.ndarray:
        return drive_hamiltonian(self.net, t)

    def superop(self, t: float) -> np.ndarray:
        return liouvillian(self.hamiltonian(t), self.coefficients(t), self.etas, self.exchange)

    def rhs(self, t: float, rho: np.ndarray) -> np.ndarray:
        return master_rhs(rho, self.hamiltonian(t), self.coefficients(t), self.etas, self.exchange)

    def _key(self, t):
        if self.mode == "instant-on":
            return ()
        return self.table.activation_state(t)

    def _single(self, t, h):
        if not self._static_drive:
            return rk4_propagator(self.superop(t), self.superop(t + h / 2), self.superop(t + h), h)
        key = (h, self._key(t), self._key(t + h / 2), self._key(t + h))
        prop = self._cache.get(key)
        if prop is None:
            prop = rk4_propagator(self.superop(t), self.superop(t + h / 2), self.superop(t + h), h)
            self._cache[key] = prop
        return prop

    def propagator(self, t: float, dt: float) -> np.ndarray:
        """Map from rho(t) to rho(t + dt): ``substeps`` RK4 steps of dt/substeps."""
        if self.substeps == 1:
            return self._single(t, dt)
        h = dt / self.substeps
        prop = self._single(t, h)
        for i in range(1, self.substeps):
            prop = self._single(t + i * h, h) @ prop
        return prop


def default_observables(n: int) -> dict[str, np.ndarray]:
    obs = {}
    for j in range(1, n + 1):
        obs[f"sz{j}"] = ops.sigma(j, "z", n)
    for j in range(1, n + 1):
        obs[f"pop{j}"] = ops.sigma(j, "plus", n) @ ops.sigma(j, "minus", n)
    if n == 2:
        # one-excitation amplitudes of the two-atom layout: |eg> and |ge>
        obs["alpha_sq"] = ops.projector("eg")
        obs["beta_sq"] = ops.projector("ge")
    return obs


def expectations(states: np.ndarray, observables: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Real parts of ``Tr[O rho]`` for a stack of states (..., d, d)."""
    return {name: np.einsum("ij,...ji->...", op, states).real for name, op in observables.items()}


@dataclass
class InvariantResiduals:
    trace_drift: float = 0.0
    hermiticity: float = 0.0
    min_eigenvalue: float = math.inf

    def update(self, rho: np.ndarray) -> None:
        self.trace_drift = max(self.trace_drift, abs(np.trace(rho) - 1))
        self.hermiticity = max(self.hermiticity, float(np.max(np.abs(rho - rho.conj().T))))
        lam = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
        self.min_eigenvalue = min(self.min_eigenvalue, lam)

    def violations(self, trace_tol=1e-6, herm_tol=1e-8, eig_tol=1e-6) -> list[str]:
        out = []
        if self.trace_drift >= trace_tol:
            out.append(f"trace drift {self.trace_drift:.3g}")
        if self.hermiticity >= herm_tol:
            out.append(f"Hermiticity residual {self.hermiticity:.3g}")
        if self.min_eigenvalue <= -eig_tol:
            out.append(f"minimum eigenvalue {self.min_eigenvalue:.3g}")
        return out

    def as_dict(self) -> dict:
        return {
            "max_trace_drift": float(self.trace_drift),
            "max_hermiticity_residual": float(self.hermiticity),
            "min_eigenvalue": float(self.min_eigenvalue),
        }


@dataclass
class EvolutionResult:
    times: np.ndarray
    states: np.ndarray
    expectations: dict[str, np.ndarray] = field(default_factory=dict)
    residuals: InvariantResiduals = field(default_factory=InvariantResiduals)


def evolve_master(
    net: Network,
    rho0: np.ndarray,
    t_end: float,
    dt: float,
    mode: str = "instant-on",
    exchange: bool = False,
    observables: Mapping[str, np.ndarray] | None = None,
    strict: bool = False,
    substeps: int = 1,
) -> EvolutionResult:
    """Integrate the master equation with fixed-step RK4.

    ``mode='instant-on'`` uses the fully activated (constant) coefficients;
    ``'activated'`` switches each delayed coefficient on at its delay.
    With ``strict`` an :class:`InvariantViolation` is raised at the first
    step breaking the density-matrix invariants.  ``substeps`` splits each
    output step into that many RK4 steps.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    bad = ops.density_violations(rho0)
    if bad:
        raise ValueError("invalid initial state: " + "; ".join(bad))
    gen = Generator(net, mode, exchange, substeps)
    times = time_grid(t_end, dt)
    d = rho0.shape[0]
    states = np.empty((len(times), d, d), dtype=complex)
    states[0] = rho0
    res = InvariantResiduals()
    res.update(rho0)
    vec = rho0.ravel()
    for k in range(1, len(times)):
        vec = gen.propagator(times[k - 1], dt) @ vec
        states[k] = vec.reshape(d, d)
        res.update(states[k])
        bad = res.violations()
        if bad:
            if strict:
                raise InvariantViolation(k, times[k], bad)
            log.debug("invariant excursion at step %d: %s", k, bad)
    obs = default_observables(net.n_atoms) if observables is None else observables
    return EvolutionResult(times, states, expectations(states, obs), res)


@dataclass(frozen=True)
class ThreeAtomParams:
    gammaL: tuple[float, float, float]
    gammaR: tuple[float, float, float]
    phi: tuple[float, float, float]
    eta: tuple[float, float, float] = (0.0, 0.0, 0.0)
    drives: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def from_network(cls, net: Network) -> "ThreeAtomParams":
        if net.n_atoms != 3 or any(len(a.points) != 1 for a in net.atoms):
            raise ValueError("need three single-point atoms")
        p = [a.points[0] for a in net.atoms]
        return cls(
            tuple(q.gammaL for q in p),
            tuple(q.gammaR for q in p),
            tuple(q.phi for q in p),
            tuple(a.eta for a in net.atoms),
            tuple(a.drive_at(0.0) for a in net.atoms),
        )

    def gamma_tilde(self, j: int, l: int) -> float:
        """Cross-decay rate between atoms j and l (0-based)."""
        gl, gr = self.gammaL, self.gammaR
        return (math.sqrt(gr[j] * gr[l]) + math.sqrt(gl[j] * gl[l])) * math.cos(self.phi[l] - self.phi[j])

    def h0(self) -> np.ndarray:
        sm = [ops.sigma(j, "minus", 3) for j in (1, 2, 3)]
        sp = [ops.sigma(j, "plus", 3) for j in (1, 2, 3)]
        h = sum(self.drives[j] * (sm[j] + sp[j]) for j in range(3))
        gl, gr, phi = self.gammaL, self.gammaR, self.phi
        for j in range(3):
            for l in range(j + 1, 3):
                c = (
                    math.sqrt(gr[j] * gr[l]) * np.exp(1j * (phi[l] - phi[j]))
                    - math.sqrt(gl[j] * gl[l]) * np.exp(1j * (phi[j] - phi[l]))
                ) / 2j
                term = c * sm[j] @ sp[l]
                h = h + term + term.conj().T
        return h


def rhs_three_atom(rho: np.ndarray, params: ThreeAtomParams) -> np.ndarray:
    """Deterministic part of the explicit three-atom filtering equation."""
    if rho.shape != (8, 8):
        raise ops.DimensionError(f"three atoms need an 8x8 state, got {rho.shape}")
    sm = [ops.sigma(j, "minus", 3) for j in (1, 2, 3)]
    sp = [ops.sigma(j, "plus", 3) for j in (1, 2, 3)]
    h0 = params.h0()
    out = -1j * (h0 @ rho - rho @ h0)
    for j in range(3):
        rate = params.gammaR[j] + params.gammaL[j] + params.eta[j]
        out += rate * ops.dissipator(sm[j], rho)
    for j in range(3):
        for l in range(3):
            if j == l:
                continue
            g = params.gamma_tilde(j, l)
            a = sm[j] @ sp[l]
            out += g * (sm[j] @ rho @ sp[l] - 0.5 * a @ rho - 0.5 * rho @ a)
    return out


def integrate_rk4(
    rhs: Callable, rho0: np.ndarray, t_end: float, dt: float, substeps: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Plain RK4 on a right-hand side ``rhs(t, rho)``; returns (times, states)."""
    times = time_grid(t_end, dt)
    states = np.empty((len(times),) + rho0.shape, dtype=complex)
    states[0] = rho0
    h = dt / substeps
    for k in range(1, len(times)):
        y = states[k - 1]
        for i in range(substeps):
            y = rk4_step(rhs, times[k - 1] + i * h, y, h)
        states[k] = y
    return times, states
