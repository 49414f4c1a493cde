"""Relaxation post-processing for exact conservation of a quadratic invariant.

For ``I(q) = 1/2 <q, q>_W`` the relaxed update ``q_old + gamma (q_new - q_old)``
conserves ``I`` for

    gamma = -2 <q_old, d>_W / <d, d>_W,     d = q_new - q_old,

the nonzero root of ``I(q_old + gamma d) = I(q_old)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import KdvhState
from .sbp import OperatorSet

__all__ = ["RelaxationResult", "relax_quadratic", "relax_vector", "invariant_weights"]

DEGENERATE_DD = 1e-28
GAMMA_RANGE = (0.5, 1.5)


@dataclass
class RelaxationResult:
    gamma: float
    state: object
    dt_effective: float
    degenerate: bool = False
    suspicious: bool = False


def invariant_weights(ops: OperatorSet, tau: float | None) -> np.ndarray:
    """Diagonal of ``diag(M, tau M, tau M)``, or ``M`` alone when ``tau`` is None."""
    if tau is None:
        return ops.norm_weights
    return np.concatenate([ops.norm_weights, tau * ops.norm_weights, tau * ops.norm_weights])


def relax_vector(weights: np.ndarray, q_old: np.ndarray, q_new: np.ndarray, dt: float = 1.0) -> RelaxationResult:
    d = q_new - q_old
    dd = float(np.dot(weights * d, d))
    if dd < DEGENERATE_DD:
        return RelaxationResult(1.0, q_new, dt, degenerate=True)
    if not np.any(q_old):
        return RelaxationResult(0.0, q_old, 0.0, degenerate=True)
    gamma = -2.0 * float(np.dot(weights * q_old, d)) / dd
    lo, hi = GAMMA_RANGE
    return RelaxationResult(gamma, q_old + gamma * d, gamma * dt, suspicious=not (lo <= gamma <= hi))


def relax_quadratic(ops: OperatorSet, tau: float | None, q_old, q_new, dt: float = 1.0) -> RelaxationResult:
    """Relax a KdVH step (``KdvhState`` pair) or a KdV step (arrays, ``tau=None``).

    ``q_old = 0`` leaves ``gamma = 0`` as the only root; it is returned with
    the degenerate flag set, and integrators fall back to the unrelaxed step.
    """
    if isinstance(q_old, KdvhState):
        tau = q_old.tau
        a, b = q_old.as_vector(), q_new.as_vector()
    else:
        a, b = np.asarray(q_old, dtype=float), np.asarray(q_new, dtype=float)
    if a.shape != b.shape:
        raise ValueError("states differ in size")
    res = relax_vector(invariant_weights(ops, tau), a, b, dt)
    if isinstance(q_old, KdvhState):
        res.state = KdvhState.from_vector(res.state, tau)
    return res
