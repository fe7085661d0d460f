"""Homodyne-conditioned trajectories of the network and their ensembles.

The conditioned state obeys

    d rho = L(rho) dt + H[Lbar] rho dW,
    H[L] rho = L rho + rho L^dag - Tr[(L + L^dag) rho] rho,

with ``L`` the master-equation generator and ``Lbar`` the measured collapse
operator.  A step of length h is integrated as

    rho -> R_{h/2} [ A(y) (R_{h/2} rho) A(y)^dag / p(y) ],

where ``R`` propagates the generator without ``D[Lbar]`` (exactly when it
is constant over the step, by RK4 otherwise) and ``A(y)``
is a Gaussian measurement operator whose average channel matches
``exp(h D[Lbar])`` to second order.  The record increment ``y`` is drawn
from its exact outcome density by inverting the CDF, so each step is a
normalized positive map and the ensemble mean follows ``R A R`` exactly.
The recorded ``dW = dY - Tr[(Lbar + Lbar^dag) rho] dt`` is the innovation.

Randomness: trajectory ``k`` of a run with base seed ``s`` draws its
uniforms from a Philox stream keyed by ``(s, k)``.  Trajectories are
simulated in fixed blocks, so results do not depend on the worker count.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import expm
from scipy.special import ndtr, ndtri

from . import operators as ops
from .dynamics import (
    Generator,
    default_observables,
    dissipator_superop,
    liouvillian,
    rk4_propagator,
    time_grid,
)
from .kernels import CoefficientTable
from .network import Network, coupling_operator_weights

log = logging.getLogger(__name__)

POSITIVITY_TOL = 1e-3
BLOCK_SIZE = 256
SCHEMES = ("instrument", "euler")


class PositivityError(RuntimeError):
    def __init__(self, step: int, min_eig: float):
        self.step, self.min_eig = step, min_eig
        super().__init__(f"step {step}: conditioned state eigenvalue {min_eig:.3g} below -{POSITIVITY_TOL}")


def measured_operator(net: Network) -> np.ndarray:
    """``Lbar = sum_j l_j sigma_j^-`` for the network's measurement port."""
    n = net.n_atoms
    out = np.zeros((2**n, 2**n), dtype=complex)
    for j, w in coupling_operator_weights(net):
        out += w * ops.sigma(j, "minus", n)
    return out


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


class Instrument:
    """Homodyne measurement of ``lbar`` over a step ``h``.

    The outcome y has density ``N(y; 0, h) * sum_k c_k y^k`` with
    ``c_k = Tr[W_k rho]``, and the post-measurement state is
    ``sum_k y^k W_k rho / sum_k c_k y^k``.
    """

    MOMENTS = (1.0, 0.0, 1.0, 0.0, 3.0)  # E[y^k] / h^(k/2)

    def __init__(self, lbar: np.ndarray, h: float):
        eye = np.eye(lbar.shape[0])
        ll = lbar.conj().T @ lbar
        l2 = lbar @ lbar
        raw = [
            eye - 0.5 * h * ll + 0.125 * h * h * ll @ ll - 0.5 * h * l2,
            lbar - 0.25 * h * (ll @ lbar + lbar @ ll),
            0.5 * l2,
        ]
        mom = [m * h ** (k / 2) for k, m in enumerate(self.MOMENTS)]
        s = sum(mom[a + b] * raw[a].conj().T @ raw[b] for a in range(3) for b in range(3))
        w, v = np.linalg.eigh(s)
        s_inv_half = (v * w**-0.5) @ v.conj().T
        self.h = h
        self.kraus = [r @ s_inv_half for r in raw]
        self.moments = np.array(mom)
        self.pieces = np.stack(
            [
                sum(np.kron(self.kraus[a], self.kraus[k - a].conj()) for a in range(3) if 0 <= k - a <= 2)
                for k in range(5)
            ]
        )

    def mean_channel(self) -> np.ndarray:
        return np.tensordot(self.moments, self.pieces, axes=1)


def outcome_cdf(x, h: float, c):
    """CDF and density at x of ``N(y; 0, h) * sum_k c_k y^k``."""
    nx = np.exp(-x * x / (2 * h)) / math.sqrt(2 * math.pi * h)
    i0 = ndtr(x / math.sqrt(h))
    i1 = -h * nx
    i2 = h * i0 - h * x * nx
    i3 = 2 * h * i1 - h * x * x * nx
    i4 = 3 * h * i2 - h * x**3 * nx
    cdf = c[0] * i0 + c[1] * i1 + c[2] * i2 + c[3] * i3 + c[4] * i4
    pdf = nx * (c[0] + x * (c[1] + x * (c[2] + x * (c[3] + x * c[4]))))
    return cdf, pdf


def sample_outcomes(u, h: float, c) -> np.ndarray:
    """Invert the outcome CDF at uniforms ``u``; ``c`` has shape (5, B)."""
    sq = math.sqrt(h)
    lo = np.full(len(u), -14 * sq)
    hi = np.full(len(u), 14 * sq)
    x = np.clip(ndtri(u) * sq + c[1] * h, lo, hi)
    active = np.arange(len(u))
    for _ in range(200):
        xa = x[active]
        f, p = outcome_cdf(xa, h, c[:, active])
        g = f - u[active]
        la = np.where(g < 0, xa, lo[active])
        ha = np.where(g > 0, xa, hi[active])
        lo[active], hi[active] = la, ha
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xa - g / p
        # bisect whenever Newton leaves the bracket
        xn = np.where((xn >= la) & (xn <= ha), xn, 0.5 * (la + ha))
        done = (np.abs(g) <= 1e-15) | (np.abs(xn - xa) <= 1e-13 * sq)
        x[active] = np.where(np.abs(g) <= 1e-15, xa, xn)
        active = active[~done]
        if not active.size:
            break
    return x


class ConditionedStepper:
    """Conditioned steps of length h for one network, with cached maps."""

    def __init__(self, net: Network, mode: str, h: float):
        self.gen = Generator(net, mode)
        self.h = h
        self.lbar = measured_operator(net)
        self.lsum = self.lbar + self.lbar.conj().T
        self.measured = bool(np.any(self.lbar))
        self.instrument = Instrument(self.lbar, h)
        self._dmeas = dissipator_superop(self.lbar)
        self._diag = np.arange(self.lbar.shape[0]) * (self.lbar.shape[0] + 1)
        self._cache: dict = {}

    def _rest(self, t):
        return self.gen.superop(t) - self._dmeas

    def _half_steps(self, t):
        h = self.h
        rest = [self._rest(t + f * h) for f in (0, 0.25, 0.5, 0.75, 1)]
        return _half_steps(rest, h)

    def _build(self, t):
        if self.measured:
            pre, post = self._half_steps(t)
        else:
            # nothing measured: the plain master-equation step
            pre = np.eye(self.lbar.size, dtype=complex)
            post = self.gen.propagator(t, self.h)
        d2 = pre.shape[0]
        stacked = np.concatenate(list(self.instrument.pieces @ pre)).reshape(5 * d2, d2)
        return stacked.T.copy(), post.T.copy()

    def maps(self, t: float):
        """(pre-measurement pieces, post map), transposed for row vectors."""
        if not self.gen._static_drive:
            return self._build(t)
        key = tuple(self.gen._key(t + f * self.h) for f in (0, 0.25, 0.5, 0.75, 1))
        out = self._cache.get(key)
        if out is None:
            out = self._cache[key] = self._build(t)
        return out

    def step(self, vecs: np.ndarray, t: float, u: np.ndarray):
        """Advance row-major vectorized states (B, d*d); returns (vecs, y)."""
        b, d2 = vecs.shape
        stacked_t, post_t = self.maps(t)
        pieces = (vecs @ stacked_t).reshape(b, 5, d2)
        c = pieces[:, :, self._diag].sum(axis=2).real.T
        c /= self.instrument.moments @ c
        y = sample_outcomes(u, self.h, c)
        powers = y[None, :] ** np.arange(5)[:, None]
        new = np.einsum("kb,bkx->bx", powers, pieces) / (powers * c).sum(axis=0)[:, None]
        d = self.lbar.shape[0]
        new = _normalize((new @ post_t).reshape(b, d, d)).reshape(b, d2)
        return new, y


def _half_steps(rest, h):
    """Propagators over [t, t+h/2] and [t+h/2, t+h] from generators at quarter steps."""
    if all(np.array_equal(rest[0], r) for r in rest[1:]):
        # exact exponential keeps the half steps completely positive
        half = expm(rest[0] * (h / 2))
        return half, half
    return rk4_propagator(rest[0], rest[1], rest[2], h / 2), rk4_propagator(rest[2], rest[3], rest[4], h / 2)


def _backaction(lbar, rhos):
    lr = lbar @ rhos
    sym = lr + np.conj(np.swapaxes(lr, -1, -2))
    tr = np.trace(sym, axis1=-2, axis2=-1)
    return sym - tr[..., None, None] * rhos


def _normalize(rhos):
    rhos = 0.5 * (rhos + np.conj(np.swapaxes(rhos, -1, -2)))
    tr = np.trace(rhos, axis1=-2, axis2=-1).real
    return rhos / tr[..., None, None]


def filter_step(
    rho,
    H,
    coeffs,
    Lbar,
    dW: float,
    dt: float,
    etas=None,
    t: float = math.inf,
    scheme: str = "euler",
    strict: bool = False,
) -> np.ndarray:
    """One conditioned update of ``rho`` given the innovation ``dW``.

    ``coeffs`` is a :class:`CoefficientTable` (evaluated at the stage times
    after ``t``) or a constant coefficient matrix.  The default
    ``scheme='euler'`` is the Euler-Maruyama update
    ``rho + L(rho) dt + H[Lbar] rho dW``.  ``scheme='instrument'`` is the
    positive split step the trajectory simulator uses, with outcome
    ``y = dW + Tr[(Lbar + Lbar^dag) rho] dt``.  Both end with Hermitization
    and trace renormalization.
    """
    rho = np.asarray(rho, dtype=complex)
    Lbar = np.asarray(Lbar, dtype=complex)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if rho.shape != Lbar.shape:
        raise ops.DimensionError(f"state {rho.shape} and Lbar {Lbar.shape} differ in shape")

    def gen(s):
        m = coeffs.matrix(s) if isinstance(coeffs, CoefficientTable) else np.asarray(coeffs, dtype=complex)
        return liouvillian(H, m, etas)

    d = rho.shape[0]
    if scheme == "euler":
        new = rho + dt * (gen(t) @ rho.ravel()).reshape(d, d) + _backaction(Lbar, rho) * dW
    elif not np.any(Lbar):
        new = (rk4_propagator(gen(t), gen(t + dt / 2), gen(t + dt), dt) @ rho.ravel()).reshape(d, d)
    else:
        dm = dissipator_superop(Lbar)
        pre, post = _half_steps([gen(t + f * dt) - dm for f in (0, 0.25, 0.5, 0.75, 1)], dt)
        y = dW + np.trace((Lbar + Lbar.conj().T) @ rho).real * dt
        pieces = Instrument(Lbar, dt).pieces @ (pre @ rho.ravel())
        weights = y ** np.arange(5)
        trace = (weights @ pieces[:, np.arange(d) * (d + 1)]).sum().real
        new = (post @ (weights @ pieces / trace)).reshape(d, d)
    new = _normalize(new)
    lam = float(np.linalg.eigvalsh(new).min())
    if lam < -POSITIVITY_TOL:
        if strict:
            raise PositivityError(0, lam)
        log.info("positivity excursion: min eigenvalue %.3g", lam)
    return new


@dataclass
class TrajectoryRecord:
    seed: int
    index: int
    times: np.ndarray
    dW: np.ndarray
    dY: np.ndarray
    expectations: dict[str, np.ndarray]
    excursions: int = 0
    min_eigenvalue: float = math.inf
    max_purity: float = 0.0


@dataclass
class EnsembleResult:
    times: np.ndarray
    M: int
    base_seed: int
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    trajectories: dict[str, np.ndarray] | None = None
    excursions: int = 0
    min_eigenvalue: float = math.inf
    max_purity: float = 0.0
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class _Task:
    net: Network
    rho0: np.ndarray
    t_end: float
    dt: float
    seed: int
    mode: str
    strict: bool
    observables: Mapping[str, np.ndarray] | None
    substeps: int = 1


def _uniforms(seed, index, n):
    # open interval (0, 1) keeps the inverse CDF finite
    return trajectory_rng(seed, index).random(n) + 2.0**-54


def _simulate_block(task: _Task, indices) -> dict:
    """Simulate trajectories ``indices`` side by side; arrays are (B, ...).

    Each output step of length dt is ``substeps`` conditioned steps of
    length dt/substeps.  dY is the sum of their outcomes and
    ``dW = dY - Tr[(Lbar + Lbar^dag) rho] dt`` with rho the state at the
    start of the output step.
    """
    net = task.net
    times = time_grid(task.t_end, task.dt)
    steps, n_sub = len(times) - 1, task.substeps
    h = task.dt / n_sub
    stepper = ConditionedStepper(net, task.mode, h)
    obs = default_observables(net.n_atoms) if task.observables is None else task.observables
    obs_rows = np.stack([np.asarray(op).T.ravel() for op in obs.values()])
    b, d = len(indices), task.rho0.shape[0]
    u = np.stack([_uniforms(task.seed, k, steps * n_sub) for k in indices]).reshape(b, steps, n_sub)
    vecs = np.broadcast_to(np.asarray(task.rho0, dtype=complex).ravel(), (b, d * d)).copy()
    exps = np.empty((len(obs), b, steps + 1))
    dY = np.zeros((b, steps))
    dW = np.zeros((b, steps))
    excursions, min_eig, max_pur = 0, math.inf, 0.0
    exps[:, :, 0] = (vecs @ obs_rows.T).real.T
    lsum_row = stepper.lsum.T.ravel()
    for k in range(steps):
        signal = (vecs @ lsum_row).real * task.dt
        for i in range(n_sub):
            vecs, y = stepper.step(vecs, times[k] + i * h, u[:, k, i])
            dY[:, k] += y
        dW[:, k] = dY[:, k] - signal
        if not np.isfinite(vecs).all():
            raise FloatingPointError(f"step {k + 1}: conditioned state is not finite")
        rhos = vecs.reshape(b, d, d)
        lam = np.linalg.eigvalsh(rhos).min(axis=1)
        bad = lam < -POSITIVITY_TOL
        if bad.any():
            if task.strict:
                raise PositivityError(k + 1, float(lam.min()))
            excursions += int(bad.sum())
        min_eig = min(min_eig, float(lam.min()))
        max_pur = max(max_pur, float(np.einsum("bij,bji->b", rhos, rhos).real.max()))
        exps[:, :, k + 1] = (vecs @ obs_rows.T).real.T
    if excursions:
        log.info("%d positivity excursions below -%g (permissive mode)", excursions, POSITIVITY_TOL)
    return {
        "times": times,
        "dW": dW,
        "dY": dY,
        "exps": dict(zip(obs, exps)),
        "excursions": excursions,
        "min_eig": min_eig,
        "max_purity": max_pur,
    }


def _checked_state(rho0):
    rho0 = np.asarray(rho0, dtype=complex)
    bad = ops.density_violations(rho0)
    if bad:
        raise ValueError("invalid initial state: " + "; ".join(bad))
    return rho0


def run_trajectory(
    net: Network,
    rho0,
    t_end: float,
    dt: float,
    seed: int,
    index: int = 0,
    mode: str = "instant-on",
    strict: bool = False,
    observables: Mapping[str, np.ndarray] | None = None,
    substeps: int = 1,
) -> TrajectoryRecord:
    """Single conditioned trajectory; deterministic in ``(seed, index)``."""
    rho0 = _checked_state(rho0)
    out = _simulate_block(_Task(net, rho0, t_end, dt, seed, mode, strict, observables, substeps), [index])
    return TrajectoryRecord(
        seed,
        index,
        out["times"],
        out["dW"][0],
        out["dY"][0],
        {name: v[0] for name, v in out["exps"].items()},
        out["excursions"],
        out["min_eig"],
        out["max_purity"],
    )


def _run_block(args):
    task, indices = args
    return _simulate_block(task, indices)


def run_ensemble(
    net: Network,
    rho0,
    t_end: float,
    dt: float,
    M: int,
    base_seed: int,
    workers: int = 1,
    mode: str = "instant-on",
    strict: bool = False,
    observables: Mapping[str, np.ndarray] | None = None,
    keep_trajectories: bool = False,
    block_size: int = BLOCK_SIZE,
    substeps: int = 1,
) -> EnsembleResult:
    """Mean and standard error of the tracked expectations over M trajectories.

    Blocks of ``block_size`` trajectories are the unit of work; their layout
    depends only on M, so any worker count gives bitwise-identical output.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    rho0 = _checked_state(rho0)
    task = _Task(net, rho0, t_end, dt, base_seed, mode, strict, observables, substeps)
    jobs = [(task, list(range(s, min(s + block_size, M)))) for s in range(0, M, block_size)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outs = list(pool.map(_run_block, jobs))
    else:
        outs = [_run_block(j) for j in jobs]
    names = list(outs[0]["exps"])
    traj = {name: np.concatenate([o["exps"][name] for o in outs]) for name in names}
    mean = {name: v.mean(axis=0) for name, v in traj.items()}
    if M > 1:
        stderr = {name: v.std(axis=0, ddof=1) / math.sqrt(M) for name, v in traj.items()}
    else:
        stderr = {name: np.zeros_like(v[0]) for name, v in traj.items()}
    return EnsembleResult(
        outs[0]["times"],
        M,
        base_seed,
        mean,
        stderr,
        traj if keep_trajectories else None,
        sum(o["excursions"] for o in outs),
        min(o["min_eig"] for o in outs),
        max(o["max_purity"] for o in outs),
    )
