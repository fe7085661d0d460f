"""Dense operators on the 2^N-dimensional atomic Hilbert space.

Each atom uses the ordered basis (|e>, |g>) and atom 1 is the leftmost
tensor factor, so for two atoms the basis is (|ee>, |eg>, |ge>, |gg>).
"""
from __future__ import annotations

from functools import lru_cache, reduce

import numpy as np

MINUS = np.array([[0, 0], [1, 0]], dtype=complex)  # |g><e|
PLUS = MINUS.T.copy()
Z = np.diag([1.0, -1.0]).astype(complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
I2 = np.eye(2, dtype=complex)

_SINGLE = {"minus": MINUS, "plus": PLUS, "z": Z, "x": X}


class DimensionError(ValueError):
    pass


def _embed(op: np.ndarray, j: int, n: int) -> np.ndarray:
    factors = [op if k == j else I2 for k in range(1, n + 1)]
    return reduce(np.kron, factors)


@lru_cache(maxsize=None)
def _sigma_cached(j: int, kind: str, n: int) -> np.ndarray:
    out = _embed(_SINGLE[kind], j, n)
    out.setflags(write=False)
    return out


def sigma(j: int, kind: str, n: int) -> np.ndarray:
    """Single-atom operator ``kind`` ('minus', 'plus', 'z', 'x') on atom j of n."""
    kind = kind.lower()
    if kind not in _SINGLE:
        raise ValueError(f"unknown operator kind {kind!r}")
    if not 1 <= j <= n:
        raise IndexError(f"atom index {j} out of range 1..{n}")
    return _sigma_cached(j, kind, n)


def ket(bits: str) -> np.ndarray:
    """Product state from a string like 'eg' (atom 1 first)."""
    vec = np.array([1.0 + 0j])
    for b in bits:
        vec = np.kron(vec, {"e": [1.0, 0.0], "g": [0.0, 1.0]}[b])
    return vec


def projector(bits: str) -> np.ndarray:
    v = ket(bits)
    return np.outer(v, v.conj())


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def _check(op, rho):
    if op.shape != rho.shape:
        raise DimensionError(f"operator shape {op.shape} does not match state shape {rho.shape}")


def dissipator(op: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``O rho O^dag - (O^dag O rho + rho O^dag O) / 2``."""
    _check(op, rho)
    od = op.conj().T
    odo = od @ op
    return op @ rho @ od - 0.5 * (odo @ rho + rho @ odo)


def measurement_superop(lbar: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Homodyne backaction ``L rho + rho L^dag - Tr[(L + L^dag) rho] rho``."""
    _check(lbar, rho)
    lr = lbar @ rho
    rl = rho @ lbar.conj().T
    return lr + rl - np.trace(lr + rl) * rho


def density_violations(rho: np.ndarray, herm_tol=1e-10, trace_tol=1e-8, eig_tol=1e-8) -> list[str]:
    """Reasons ``rho`` is not a valid density matrix (empty when valid)."""
    out = []
    d = rho.shape[0]
    if rho.ndim != 2 or rho.shape[1] != d or d & (d - 1):
        return [f"bad shape {rho.shape}"]
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > herm_tol:
        out.append(f"not Hermitian (residual {herm:.3g})")
    tr = np.trace(rho)
    if abs(tr - 1) > trace_tol:
        out.append(f"trace {tr.real:.12g} != 1")
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if lam < -eig_tol:
        out.append(f"negative eigenvalue {lam:.3g}")
    return out


def expect(op: np.ndarray, rho: np.ndarray) -> complex:
    return complex(np.trace(op @ rho))


def lowering_ops(n: int) -> list[np.ndarray]:
    return [sigma(j, "minus", n) for j in range(1, n + 1)]
