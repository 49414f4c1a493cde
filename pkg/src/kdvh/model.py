"""Split-form semidiscretizations of KdV and its hyperbolic relaxation.

KdV:   eta_t = -1/3 (D eta^2 + eta D eta) - D_+ D D_- eta
KdVH:  u_t = -1/3 (D u^2 + u D u) - D_+ w
       v_t = (D v - w) / tau
       w_t = (-D_- u + v) / tau

The nonlinear term is always evaluated in split form; together with the SBP
properties this makes mass and the (modified) energy exact invariants of the
semidiscrete systems.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .sbp import OperatorSet

__all__ = [
    "KdvhState",
    "SolitonParams",
    "StiffOperator",
    "split_convection",
    "kdv_rhs",
    "kdv_dispersion",
    "kdvh_rhs_split",
    "kdvh_rhs",
    "stiff_operator",
    "mass",
    "energy_kdv",
    "energy_kdvh",
    "kdv_soliton",
    "kdv_soliton_derivative",
    "well_prepared_init",
    "write_snapshot",
    "read_snapshot",
]


@dataclass
class KdvhState:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    tau: float

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if not self.tau > 0:
            raise ValueError(f"relaxation parameter must be positive, got {self.tau}")
        if not (self.u.shape == self.v.shape == self.w.shape):
            raise ValueError("u, v, w must have the same shape")

    @property
    def n(self) -> int:
        return self.u.shape[-1]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.v, self.w])

    @classmethod
    def from_vector(cls, q: np.ndarray, tau: float) -> KdvhState:
        u, v, w = np.split(np.asarray(q, dtype=float), 3)
        return cls(u.copy(), v.copy(), w.copy(), tau)


@dataclass(frozen=True)
class SolitonParams:
    """KdV soliton of speed ``c``; amplitude ``3c``."""

    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"soliton speed must be positive, got {self.c}")

    @classmethod
    def from_amplitude(cls, amplitude: float) -> SolitonParams:
        return cls(amplitude / 3.0)

    @property
    def amplitude(self) -> float:
        return 3.0 * self.c


def _check_length(ops: OperatorSet, *arrays: np.ndarray) -> None:
    for a in arrays:
        if np.shape(a)[-1] != ops.n:
            raise ValueError(f"length mismatch: grid has {ops.n} points, got {np.shape(a)[-1]}")


def split_convection(ops: OperatorSet, u: np.ndarray) -> np.ndarray:
    """``-1/3 (D u^2 + u D u)``."""
    D = ops.d_central
    return -(D @ (u * u) + u * (D @ u)) / 3.0


def kdv_dispersion(ops: OperatorSet, eta: np.ndarray) -> np.ndarray:
    return -(ops.third_derivative @ eta)


def kdv_rhs(ops: OperatorSet, eta: np.ndarray) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    _check_length(ops, eta)
    return split_convection(ops, eta) + kdv_dispersion(ops, eta)


def kdvh_rhs_split(ops: OperatorSet, s: KdvhState) -> tuple[np.ndarray, np.ndarray]:
    """Explicit (convective) and implicit (linear) parts, each of length 3n."""
    if not s.tau > 0:
        raise ValueError("tau must be positive")
    _check_length(ops, s.u)
    zeros = np.zeros_like(s.u)
    f = np.concatenate([split_convection(ops, s.u), zeros, zeros])
    g = np.concatenate([
        -(ops.d_plus @ s.w),
        (ops.d_central @ s.v - s.w) / s.tau,
        (-(ops.d_minus @ s.u) + s.v) / s.tau,
    ])
    return f, g


def kdvh_rhs(ops: OperatorSet, s: KdvhState) -> np.ndarray:
    f, g = kdvh_rhs_split(ops, s)
    return f + g


class StiffOperator:
    """The linear map ``G`` of the KdVH splitting, acting on ``q = (u, v, w)``.

    Block structure ``[[0, 0, -D_+], [0, D/tau, -I/tau], [-D_-/tau, I/tau, 0]]``.
    """

    def __init__(self, ops: OperatorSet, tau: float):
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        self.ops = ops
        self.tau = float(tau)
        self.n = ops.n

    @property
    def shape(self) -> tuple[int, int]:
        return (3 * self.n, 3 * self.n)

    def apply(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != 3 * self.n:
            raise ValueError(f"expected a vector of length {3 * self.n}")
        u, v, w = np.split(q, 3)
        ops, tau = self.ops, self.tau
        return np.concatenate([
            -(ops.d_plus @ w),
            (ops.d_central @ v - w) / tau,
            (v - ops.d_minus @ u) / tau,
        ])

    __matmul__ = apply

    def blocks(self):
        """Nested 3x3 list of n x n dense blocks (``None`` for zero blocks)."""
        ops, tau, n = self.ops, self.tau, self.n
        eye = np.eye(n)
        return [
            [None, None, -ops.d_plus.dense()],
            [None, ops.d_central.dense() / tau, -eye / tau],
            [-ops.d_minus.dense() / tau, eye / tau, None],
        ]

    def dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros(self.shape)
        for i, row in enumerate(self.blocks()):
            for j, blk in enumerate(row):
                if blk is not None:
                    out[i * n:(i + 1) * n, j * n:(j + 1) * n] = blk
        return out

    def sparse(self) -> sp.csc_matrix:
        ops, tau, n = self.ops, self.tau, self.n
        eye = sp.identity(n, format="csr")
        blocks = [
            [sp.csr_matrix((n, n)), None, -ops.d_plus.sparse()],
            [None, ops.d_central.sparse() / tau, -eye / tau],
            [-ops.d_minus.sparse() / tau, eye / tau, None],
        ]
        return sp.bmat(blocks, format="csc")

    def symbol_blocks(self) -> np.ndarray:
        """Per-wavenumber 3x3 symbols, shape ``(n//2 + 1, 3, 3)`` (rfft modes)."""
        ops, tau = self.ops, self.tau
        m = self.n // 2 + 1
        p = ops.d_plus.symbol()[:m]
        c = ops.d_central.symbol()[:m]
        mi = ops.d_minus.symbol()[:m]
        out = np.zeros((m, 3, 3), dtype=complex)
        out[:, 0, 2] = -p
        out[:, 1, 1] = c / tau
        out[:, 1, 2] = -1.0 / tau
        out[:, 2, 0] = -mi / tau
        out[:, 2, 1] = 1.0 / tau
        return out


def stiff_operator(ops: OperatorSet, tau: float) -> StiffOperator:
    return StiffOperator(ops, tau)


def mass(ops: OperatorSet, state) -> float:
    """Discrete mass of ``eta`` (array) or of the ``u`` component of a KdvhState."""
    u = state.u if isinstance(state, KdvhState) else np.asarray(state, dtype=float)
    _check_length(ops, u)
    return float(np.sum(ops.norm_weights * u))


def energy_kdv(ops: OperatorSet, eta: np.ndarray) -> float:
    eta = np.asarray(eta, dtype=float)
    _check_length(ops, eta)
    return 0.5 * ops.inner(eta, eta)


def energy_kdvh(ops: OperatorSet, s: KdvhState) -> float:
    _check_length(ops, s.u)
    return 0.5 * (ops.inner(s.u, s.u) + s.tau * (ops.inner(s.v, s.v) + ops.inner(s.w, s.w)))


def kdv_soliton(p: SolitonParams | float, x: np.ndarray, t: float = 0.0, x0: float = 0.0) -> np.ndarray:
    """``3c sech^2(sqrt(9c) (x - x0 - ct) / 6)``, equivalently ``A sech^2(sqrt(3A) ... / 6)``."""
    c = p.c if isinstance(p, SolitonParams) else float(p)
    if not c > 0:
        raise ValueError("soliton speed must be positive")
    xi = np.asarray(x, dtype=float) - x0 - c * t
    return 3.0 * c / np.cosh(math.sqrt(9.0 * c) * xi / 6.0) ** 2


def kdv_soliton_derivative(p: SolitonParams | float, x: np.ndarray, t: float = 0.0, x0: float = 0.0) -> np.ndarray:
    """Closed-form ``x``-derivative of :func:`kdv_soliton`."""
    c = p.c if isinstance(p, SolitonParams) else float(p)
    k = math.sqrt(9.0 * c) / 6.0
    z = k * (np.asarray(x, dtype=float) - x0 - c * t)
    return -6.0 * c * k * np.tanh(z) / np.cosh(z) ** 2


def well_prepared_init(ops: OperatorSet, u0: np.ndarray, tau: float) -> KdvhState:
    """Place the auxiliaries on the discrete equilibrium: ``v = D_- u``, ``w = D D_- u``."""
    u0 = np.asarray(u0, dtype=float)
    _check_length(ops, u0)
    v0 = ops.d_minus @ u0
    return KdvhState(u0.copy(), v0, ops.d_central @ v0, tau)


def write_snapshot(path, x: np.ndarray, state: KdvhState, t: float, grid_info: dict | None = None) -> None:
    """CSV with a one-line JSON header comment, columns ``x,u,v,w``."""
    header = {"t": t, "tau": state.tau, "grid": grid_info or {}}
    path = Path(path)
    with path.open("w") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        fh.write("x,u,v,w\n")
        for row in zip(x, state.u, state.v, state.w):
            fh.write(",".join(f"{val:.17e}" for val in row) + "\n")


def read_snapshot(path) -> tuple[dict, np.ndarray, KdvhState]:
    path = Path(path)
    with path.open() as fh:
        header = json.loads(fh.readline()[1:])
    data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    return header, data[:, 0], KdvhState(data[:, 1], data[:, 2], data[:, 3], header["tau"])
