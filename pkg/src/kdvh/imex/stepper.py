"""ImEx Runge-Kutta time stepping for the split KdV and KdVH semidiscretizations.

The implicit part is linear, so every stage system ``(I - h G) x = r`` is
solved with a factorization cached per ``h = a_ii dt``. Rows belonging to the
relaxed variables are multiplied by ``tau`` before factoring; this keeps the
systems well scaled as ``tau -> 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import StageSolveError
from ..model import KdvhState, StiffOperator, split_convection
from ..relaxation import relax_vector
from ..sbp import OperatorSet
from .tableaux import ImexTableau, classify

__all__ = [
    "KdvProblem",
    "KdvhProblem",
    "StageSolverCache",
    "solve_stage",
    "imex_step",
    "step",
    "step_kdv",
    "integrate",
    "IntegrationResult",
    "BACKENDS",
]

BACKENDS = ("fft", "sparse", "dense")
RESIDUAL_TOL = 1e-12


class KdvhProblem:
    """``q' = f(q) + G q`` for the KdVH semidiscretization, ``q = (u, v, w)``."""

    def __init__(self, ops: OperatorSet, tau: float):
        self.ops = ops
        self.tau = float(tau)
        self.G = StiffOperator(ops, tau)
        self.n = ops.n
        self.size = 3 * ops.n
        self.row_scale = np.concatenate([np.ones(self.n), np.full(2 * self.n, self.tau)])
        self.energy_weights = np.concatenate(
            [ops.norm_weights, self.tau * ops.norm_weights, self.tau * ops.norm_weights])

    @property
    def key(self):
        return ("kdvh", id(self.ops), self.tau)

    def explicit(self, q: np.ndarray) -> np.ndarray:
        out = np.zeros_like(q)
        out[: self.n] = split_convection(self.ops, q[: self.n])
        return out

    def implicit(self, q: np.ndarray) -> np.ndarray:
        return self.G.apply(q)

    def scaled_implicit(self, q: np.ndarray) -> np.ndarray:
        """``row_scale * (G q)`` without dividing by ``tau``."""
        ops, n = self.ops, self.n
        u, v, w = q[:n], q[n:2 * n], q[2 * n:]
        return np.concatenate([-(ops.d_plus @ w), ops.d_central @ v - w, v - ops.d_minus @ u])

    def mode_matrices(self, h: float) -> np.ndarray:
        """Row-scaled ``I - h G`` per rfft mode, shape ``(n//2+1, 3, 3)``."""
        sym = self.G.symbol_blocks()
        eye = np.eye(3)
        scale = np.array([1.0, self.tau, self.tau])[None, :, None]
        return scale * (eye[None] - h * sym)

    def sparse_matrix(self, h: float) -> sp.csc_matrix:
        S = sp.diags(self.row_scale)
        return (S @ (sp.identity(self.size) - h * self.G.sparse())).tocsc()

    def dense_matrix(self, h: float) -> np.ndarray:
        return self.row_scale[:, None] * (np.eye(self.size) - h * self.G.dense())

    def to_modes(self, q: np.ndarray) -> np.ndarray:
        return np.fft.rfft(q.reshape(3, self.n), axis=-1).T  # (m, 3)

    def from_modes(self, qhat: np.ndarray) -> np.ndarray:
        return np.fft.irfft(qhat.T, n=self.n, axis=-1).ravel()


class KdvProblem:
    """``eta' = f(eta) + g(eta)`` with ``g = -D_+ D D_-``, the stiff-limit reference."""

    def __init__(self, ops: OperatorSet, nonlinear: bool = True):
        self.ops = ops
        self.nonlinear = nonlinear
        self.n = ops.n
        self.size = ops.n
        self.row_scale = np.ones(self.n)
        self.energy_weights = ops.norm_weights
        self._third = ops.third_derivative

    @property
    def key(self):
        return ("kdv", id(self.ops), self.nonlinear)

    def explicit(self, q):
        if not self.nonlinear:
            return np.zeros_like(q)
        return split_convection(self.ops, q)

    def implicit(self, q):
        return -(self._third @ q)

    scaled_implicit = implicit

    def mode_matrices(self, h):
        sym = self._third.symbol()[: self.n // 2 + 1]
        return (1.0 + h * sym)[:, None, None]

    def sparse_matrix(self, h):
        return (sp.identity(self.n) + h * self._third.sparse()).tocsc()

    def dense_matrix(self, h):
        return np.eye(self.n) + h * self._third.dense()

    def to_modes(self, q):
        return np.fft.rfft(q)[:, None]

    def from_modes(self, qhat):
        return np.fft.irfft(qhat[:, 0], n=self.n)


@dataclass
class StageSolverCache:
    """Factorizations of the stage matrices ``I - h G`` for one problem.

    A cache is bound to one problem (operators, tau); entries are keyed by
    ``h = a_ii dt``, so stages sharing a diagonal coefficient share a solve.
    """

    problem: object
    backend: str = "fft"
    check_residual: bool = True
    _factors: dict = field(default_factory=dict, repr=False)
    hits: int = 0
    misses: int = 0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; choose from {BACKENDS}")

    def clear(self):
        self._factors.clear()

    def _factor(self, h: float):
        if h in self._factors:
            self.hits += 1
            return self._factors[h]
        self.misses += 1
        p = self.problem
        if self.backend == "fft":
            mats = p.mode_matrices(h)
            if mats.shape[-1] == 1:
                fac = 1.0 / mats[:, 0, 0]
            else:
                fac = np.linalg.inv(mats)
        elif self.backend == "sparse":
            fac = spla.splu(p.sparse_matrix(h))
        else:
            fac = sla.lu_factor(p.dense_matrix(h))
        self._factors[h] = fac
        return fac

    def solve(self, rhs: np.ndarray, h: float, stage: int | None = None) -> np.ndarray:
        if h < 0:
            raise ValueError("stage coefficient times dt must be nonnegative")
        if h == 0:
            return rhs.copy()
        fac = self._factor(h)
        p = self.problem
        srhs = p.row_scale * rhs
        if self.backend == "fft":
            rh = p.to_modes(srhs)
            if fac.ndim == 1:
                x = p.from_modes(fac[:, None] * rh)
            else:
                x = p.from_modes(np.einsum("kij,kj->ki", fac, rh))
        elif self.backend == "sparse":
            x = fac.solve(srhs)
        else:
            x = sla.lu_solve(fac, srhs)
        if self.check_residual:
            sgx = p.scaled_implicit(x)
            res = p.row_scale * x - h * sgx - srhs
            scale = np.linalg.norm(srhs) + np.linalg.norm(p.row_scale * x) + h * np.linalg.norm(sgx)
            if not np.all(np.isfinite(x)) or np.linalg.norm(res) > RESIDUAL_TOL * max(scale, 1e-300):
                raise StageSolveError(
                    f"residual {np.linalg.norm(res):.3e} exceeds tolerance (scale {scale:.3e})", stage)
        return x


def solve_stage(cache: StageSolverCache, rhs: np.ndarray, a_dt: float) -> np.ndarray:
    """Solve ``(I - a_dt G) x = rhs``."""
    return cache.solve(np.asarray(rhs, dtype=float), a_dt)


@dataclass(frozen=True)
class _Plan:
    """Which stage derivatives a tableau actually uses."""

    need_f: tuple
    need_g: tuple
    sa: bool
    gsa: bool


_PLANS: dict = {}


def _plan(tab: ImexTableau) -> _Plan:
    key = tab.name
    if key not in _PLANS:
        flags = classify(tab)
        ae, ai, be, bi = tab.a_explicit, tab.a_implicit, tab.b_explicit, tab.b_implicit
        need_f = tuple(bool(np.any(ae[:, j] != 0) or be[j] != 0) for j in range(tab.s))
        need_g = tuple(bool(np.any(np.tril(ai, -1)[:, j] != 0) or bi[j] != 0) for j in range(tab.s))
        _PLANS[key] = _Plan(need_f, need_g, flags["sa"], flags["gsa"])
    return _PLANS[key]


def imex_step(tab: ImexTableau, problem, q: np.ndarray, dt: float, cache: StageSolverCache,
              debug: bool = False) -> np.ndarray:
    """One ImEx step for a problem ``q' = f(q) + G q`` with linear ``G``.

    Implicit stage derivatives are recovered from the stage equation,
    ``G q_i = (q_i - r_i) / (a_ii dt)``, which avoids re-applying the stiff
    operator. For stiffly accurate implicit parts the update is assembled from
    the last stage; for GSA methods it *is* the last stage.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    plan = _plan(tab)
    s = tab.s
    ae, ai = tab.a_explicit, tab.a_implicit
    F: list = [None] * s
    Gq: list = [None] * s
    Q = None
    for i in range(s):
        rhs = q.copy()
        for j in range(i):
            if ae[i, j] != 0:
                rhs += (dt * ae[i, j]) * F[j]
            if ai[i, j] != 0:
                rhs += (dt * ai[i, j]) * Gq[j]
        h = ai[i, i] * dt
        if h == 0:
            Q = rhs
            if plan.need_g[i]:
                Gq[i] = problem.implicit(Q)
        else:
            Q = cache.solve(rhs, h, stage=i + 1)
            Gq[i] = (Q - rhs) / h
        if plan.need_f[i]:
            F[i] = problem.explicit(Q)
    if plan.sa:
        out = Q.copy()
        corr = tab.b_explicit - ae[-1]
        for j in range(s):
            if corr[j] != 0:
                out += (dt * corr[j]) * F[j]
        if debug and plan.gsa:
            full = q + dt * sum(tab.b_explicit[j] * F[j] for j in range(s) if F[j] is not None) \
                + dt * sum(tab.b_implicit[j] * Gq[j] for j in range(s) if Gq[j] is not None)
            assert np.allclose(full, out, rtol=1e-12, atol=1e-12 * np.abs(out).max())
        return out
    out = q.copy()
    for j in range(s):
        if tab.b_explicit[j] != 0:
            out += (dt * tab.b_explicit[j]) * F[j]
        if tab.b_implicit[j] != 0:
            out += (dt * tab.b_implicit[j]) * Gq[j]
    return out


def step(tab: ImexTableau, ops: OperatorSet, s: KdvhState, dt: float,
         cache: StageSolverCache | None = None) -> KdvhState:
    """Advance a KdVH state by one ImEx step."""
    if cache is None:
        cache = StageSolverCache(KdvhProblem(ops, s.tau))
    p = cache.problem
    if not isinstance(p, KdvhProblem) or p.ops is not ops or p.tau != s.tau:
        raise ValueError("solver cache is bound to different operators or tau")
    q = imex_step(tab, p, s.as_vector(), dt, cache)
    return KdvhState.from_vector(q, s.tau)


def step_kdv(tab: ImexTableau, ops: OperatorSet, eta: np.ndarray, dt: float,
             cache: StageSolverCache | None = None) -> np.ndarray:
    """Advance a KdV state by one ImEx step (convection explicit, dispersion implicit)."""
    if cache is None:
        cache = StageSolverCache(KdvProblem(ops))
    p = cache.problem
    if not isinstance(p, KdvProblem) or p.ops is not ops:
        raise ValueError("solver cache is bound to a different problem")
    return imex_step(tab, p, np.asarray(eta, dtype=float), dt, cache)


@dataclass
class IntegrationResult:
    q: np.ndarray
    t: float
    steps: int
    gammas: list = field(default_factory=list)
    flagged_steps: int = 0
    overshoot: float = 0.0


def integrate(tab: ImexTableau, problem, q0: np.ndarray, dt: float, t_final: float, *,
              relaxation: bool = False, cache: StageSolverCache | None = None,
              callback: Callable[[float, np.ndarray, float], None] | None = None,
              t0: float = 0.0, max_extra_steps: int = 20,
              landing_iterations: int = 8) -> IntegrationResult:
    """Integrate from ``t0`` to ``t_final`` with fixed step ``dt``.

    Without relaxation the step count is ``ceil((t_final - t0) / dt)`` and the
    last step is shortened to land on ``t_final``. With relaxation time advances
    by ``gamma * dt``. The closing step is found by fixed-point iteration on
    ``gamma(h) h = t_final - t``, repeated from the same state, so that the run
    ends within ``1e-13 max(1, t_final)`` of ``t_final`` while every accepted
    step stays relaxed. A remaining overshoot is recorded in the result.

    ``callback(t, q, gamma)`` is called after every step.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    if cache is None:
        cache = StageSolverCache(problem)
    q = np.array(q0, dtype=float)
    span = t_final - t0
    if span < 0:
        raise ValueError("t_final precedes t0")
    result = IntegrationResult(q, t0, 0)
    if span == 0:
        return result

    if not relaxation:
        nsteps = max(1, math.ceil(span / dt - 1e-9))
        t = t0
        for k in range(nsteps):
            h = dt if k < nsteps - 1 else (t_final - (t0 + (nsteps - 1) * dt))
            q = imex_step(tab, problem, q, h, cache)
            t = t_final if k == nsteps - 1 else t0 + (k + 1) * dt
            if callback is not None:
                callback(t, q, 1.0)
        result.q, result.t, result.steps = q, t, nsteps
        return result

    weights = problem.energy_weights
    tol = 1e-13 * max(1.0, abs(t_final))

    def relaxed_step(h):
        q_new = imex_step(tab, problem, q, h, cache)
        rel = relax_vector(weights, q, q_new, h)
        if rel.degenerate:
            return q_new, 1.0, h, False
        return rel.state, rel.gamma, rel.dt_effective, rel.suspicious

    t, gamma_last, steps, closing = t0, 1.0, 0, 0
    while t_final - t > tol:
        remaining = t_final - t
        if remaining > 1.5 * dt * gamma_last:
            q_next, gamma, advance, flag = relaxed_step(dt)
        else:
            # land on t_final: adjust h until gamma(h) * h matches the remaining time
            closing += 1
            if closing > max_extra_steps:
                break
            h = remaining / gamma_last
            q_next, gamma, advance, flag = relaxed_step(h)
            for _ in range(landing_iterations):
                if abs(advance - remaining) <= tol or advance <= 0:
                    break
                h *= remaining / advance
                q_next, gamma, advance, flag = relaxed_step(h)
            if advance - remaining > tol:
                result.overshoot = max(result.overshoot, advance - remaining)
        q = q_next
        t += advance
        if gamma > 0:
            gamma_last = gamma
        result.flagged_steps += int(flag)
        steps += 1
        result.gammas.append(gamma)
        if callback is not None:
            callback(t, q, gamma)
    result.q, result.t, result.steps = q, t, steps
    return result
