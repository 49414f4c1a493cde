r"""Periodic grids and summation-by-parts derivative operators.

All operators here are circulant. Finite difference operators are stored as
stencils ``(D u)_i = sum_j a_j u_{i+j}``; the Fourier pseudospectral operator
is stored through its symbol. Both are diagonalized by the discrete Fourier
transform, which the implicit solvers exploit.

With the diagonal norm :math:`M = \Delta x I`, an upwind pair satisfies

.. math::

    M D_+ + D_-^T M = 0, \qquad \tfrac12 M (D_+ - D_-) \preceq 0,

and the central operator :math:`D = (D_+ + D_-)/2` is skew-adjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "PeriodicGrid",
    "CirculantOperator",
    "StencilOperator",
    "SpectralOperator",
    "OperatorSet",
    "UPWIND_STENCILS",
    "make_grid",
    "make_upwind_operators",
    "make_fourier_operator",
    "make_operators",
    "apply",
    "derive_upwind_stencil",
    "check_operator_set",
]


# Forward-biased (q+1)-point stencils of D_+ for accuracy order q, as
# (first offset, coefficients in units of 1/dx). They are the unique
# minimal-width biased stencils; each has a negative semidefinite symmetric
# part. Regenerate with derive_upwind_stencil().
UPWIND_STENCILS: dict[int, tuple[int, tuple[str, ...]]] = {
    1: (0, ("-1", "1")),
    2: (0, ("-3/2", "2", "-1/2")),
    3: (-1, ("-1/3", "-1/2", "1", "-1/6")),
    4: (-1, ("-1/4", "-5/6", "3/2", "-1/2", "1/12")),
    5: (-2, ("1/20", "-1/2", "-1/3", "1", "-1/4", "1/30")),
    6: (-2, ("1/30", "-2/5", "-7/12", "4/3", "-1/2", "2/15", "-1/60")),
    7: (-3, ("-1/105", "1/10", "-3/5", "-1/4", "1", "-3/10", "1/15", "-1/140")),
    8: (-3, ("-1/168", "1/14", "-1/2", "-9/20", "5/4", "-1/2", "1/6", "-1/28", "1/280")),
}


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on ``[x_left, x_right)`` with periodic identification."""

    x_left: float
    x_right: float
    n: int

    @property
    def length(self) -> float:
        return self.x_right - self.x_left

    @property
    def dx(self) -> float:
        return self.length / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.x_left + self.dx * np.arange(self.n)

    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers in ``numpy.fft.fft`` ordering."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)


def make_grid(x_left: float, x_right: float, n: int) -> PeriodicGrid:
    """Build a periodic grid; the right endpoint is identified with the left."""
    if not (np.isfinite(x_left) and np.isfinite(x_right)) or x_right <= x_left:
        raise ValueError(f"degenerate interval [{x_left}, {x_right}]")
    if int(n) != n or n < 4:
        raise ValueError(f"need an integer n >= 4, got {n}")
    return PeriodicGrid(float(x_left), float(x_right), int(n))


class CirculantOperator:
    """Linear periodic operator on ``n`` grid values.

    ``op @ vec`` applies the operator, ``op @ other`` composes.
    """

    n: int

    def apply(self, vec: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def symbol(self) -> np.ndarray:
        """Eigenvalues in ``numpy.fft.fft`` ordering: ``fft(op @ u) = symbol * fft(u)``."""
        raise NotImplementedError

    def transpose(self) -> CirculantOperator:
        raise NotImplementedError

    @property
    def T(self) -> CirculantOperator:
        return self.transpose()

    def dense(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(self.n)])

    def sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.dense())

    def _check(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if vec.shape[-1] != self.n:
            raise ValueError(f"length mismatch: operator acts on {self.n} values, got {vec.shape[-1]}")
        return vec

    def __matmul__(self, other):
        if isinstance(other, CirculantOperator):
            return compose(self, other)
        return self.apply(other)

    def __add__(self, other: CirculantOperator) -> CirculantOperator:
        return combine(self, other, 1.0, 1.0)

    def __sub__(self, other: CirculantOperator) -> CirculantOperator:
        return combine(self, other, 1.0, -1.0)

    def __mul__(self, scalar: float) -> CirculantOperator:
        return combine(self, self, float(scalar), 0.0)

    __rmul__ = __mul__

    def __neg__(self) -> CirculantOperator:
        return self * -1.0


class StencilOperator(CirculantOperator):
    """Operator ``(D u)_i = sum_j coeffs[j] * u[(i + offsets[j]) % n]``."""

    def __init__(self, n: int, offsets, coeffs):
        stencil: dict[int, float] = {}
        for off, c in zip(offsets, coeffs):
            stencil[int(off)] = stencil.get(int(off), 0.0) + float(c)
        self.n = int(n)
        self.offsets = np.array(sorted(stencil), dtype=int)
        self.coeffs = np.array([stencil[o] for o in self.offsets])

    def apply(self, vec):
        vec = self._check(vec)
        out = np.zeros_like(vec)
        for off, c in zip(self.offsets, self.coeffs):
            if c != 0.0:
                out += c * np.roll(vec, -off, axis=-1)
        return out

    def symbol(self):
        k = np.arange(self.n)
        phase = np.exp(2j * np.pi * np.outer(self.offsets, k) / self.n)
        return self.coeffs @ phase

    def transpose(self):
        return StencilOperator(self.n, -self.offsets, self.coeffs)

    def sparse(self):
        rows = np.repeat(np.arange(self.n), len(self.offsets))
        cols = (rows.reshape(self.n, -1) + self.offsets[None, :]) % self.n
        vals = np.tile(self.coeffs, self.n)
        return sp.csr_matrix((vals, (rows, cols.ravel())), shape=(self.n, self.n))

    def row(self) -> np.ndarray:
        """First row of the dense matrix."""
        r = np.zeros(self.n)
        np.add.at(r, self.offsets % self.n, self.coeffs)
        return r

    def __repr__(self):
        return f"StencilOperator(n={self.n}, offsets={self.offsets.tolist()})"


class SpectralOperator(CirculantOperator):
    """Operator defined by its Fourier symbol; real-valued on real input."""

    def __init__(self, n: int, symbol: np.ndarray):
        self.n = int(n)
        self._symbol = np.asarray(symbol, dtype=complex)
        self._rsymbol = self._symbol[: self.n // 2 + 1]

    def apply(self, vec):
        vec = self._check(vec)
        return np.fft.irfft(self._rsymbol * np.fft.rfft(vec, axis=-1), n=self.n, axis=-1)

    def symbol(self):
        return self._symbol.copy()

    def transpose(self):
        return SpectralOperator(self.n, np.conj(self._symbol))

    def __repr__(self):
        return f"SpectralOperator(n={self.n})"


def compose(a: CirculantOperator, b: CirculantOperator) -> CirculantOperator:
    if a.n != b.n:
        raise ValueError("operators act on different grid sizes")
    if isinstance(a, StencilOperator) and isinstance(b, StencilOperator):
        offs = (a.offsets[:, None] + b.offsets[None, :]).ravel()
        coeffs = (a.coeffs[:, None] * b.coeffs[None, :]).ravel()
        return StencilOperator(a.n, offs, coeffs)
    return SpectralOperator(a.n, a.symbol() * b.symbol())


def combine(a: CirculantOperator, b: CirculantOperator, alpha: float, beta: float) -> CirculantOperator:
    """Return ``alpha * a + beta * b``."""
    if a.n != b.n:
        raise ValueError("operators act on different grid sizes")
    if isinstance(a, StencilOperator) and isinstance(b, StencilOperator):
        return StencilOperator(
            a.n,
            np.concatenate([a.offsets, b.offsets]),
            np.concatenate([alpha * a.coeffs, beta * b.coeffs]),
        )
    return SpectralOperator(a.n, alpha * a.symbol() + beta * b.symbol())


def apply(op: CirculantOperator, vec: np.ndarray) -> np.ndarray:
    """Apply ``op`` to ``vec``; raises ``ValueError`` on length mismatch."""
    return op.apply(vec)


@dataclass(frozen=True)
class OperatorSet:
    """Matched upwind triple with the diagonal norm ``M = diag(norm_weights)``."""

    grid: PeriodicGrid
    d_plus: CirculantOperator
    d_minus: CirculantOperator
    d_central: CirculantOperator
    norm_weights: np.ndarray
    accuracy_order: int
    kind: str  # "upwind_fd" or "fourier"

    @property
    def n(self) -> int:
        return self.grid.n

    @cached_property
    def third_derivative(self) -> CirculantOperator:
        """``D_+ D D_-``, the dispersive operator of the KdV semidiscretization."""
        return self.d_plus @ self.d_central @ self.d_minus

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(self.norm_weights * a, b))

    def norm(self, a: np.ndarray) -> float:
        return math.sqrt(self.inner(a, a))

    def describe(self) -> dict:
        g = self.grid
        return {
            "kind": self.kind,
            "accuracy_order": self.accuracy_order,
            "x_left": g.x_left,
            "x_right": g.x_right,
            "n": g.n,
        }


def derive_upwind_stencil(order: int, first_offset: int | None = None) -> tuple[int, list[Fraction]]:
    """Solve the accuracy conditions for a (order+1)-point first-derivative stencil.

    Exact rational arithmetic. The default placement has one more point on the
    right than on the left, which yields a dissipative ``D_+``.
    """
    if order < 1:
        raise ValueError("order must be positive")
    if first_offset is None:
        first_offset = -((order - 1) // 2)
    offsets = list(range(first_offset, first_offset + order + 1))
    # Vandermonde system sum_j a_j j^m = [m == 1], m = 0..order
    rows = [[Fraction(j) ** m for j in offsets] + [Fraction(int(m == 1))] for m in range(order + 1)]
    size = order + 1
    for col in range(size):
        piv = next(r for r in range(col, size) if rows[r][col] != 0)
        rows[col], rows[piv] = rows[piv], rows[col]
        for r in range(size):
            if r != col and rows[r][col] != 0:
                factor = rows[r][col] / rows[col][col]
                rows[r] = [x - factor * y for x, y in zip(rows[r], rows[col])]
    return first_offset, [rows[i][size] / rows[i][i] for i in range(size)]


def make_upwind_operators(grid: PeriodicGrid, order: int) -> OperatorSet:
    """Periodic upwind SBP operators of accuracy ``order`` (1 to 8) with ``M = dx I``."""
    if order not in UPWIND_STENCILS:
        raise ValueError(f"unsupported upwind order {order}; available: {sorted(UPWIND_STENCILS)}")
    first, coeffs = UPWIND_STENCILS[order]
    if len(coeffs) > grid.n:
        raise ValueError(f"grid with n={grid.n} is too small for order {order}")
    offsets = np.arange(first, first + len(coeffs))
    values = np.array([float(Fraction(c)) for c in coeffs]) / grid.dx
    d_plus = StencilOperator(grid.n, offsets, values)
    d_minus = -d_plus.transpose()
    d_central = 0.5 * (d_plus + d_minus)
    # symmetric part of D_+ must be dissipative; probe the symbol directly
    if d_plus.symbol().real.max() > 1e-12 * np.abs(values).sum():
        raise ArithmeticError(f"upwind stencil of order {order} is not dissipative")
    return OperatorSet(
        grid=grid,
        d_plus=d_plus,
        d_minus=d_minus,
        d_central=d_central,
        norm_weights=np.full(grid.n, grid.dx),
        accuracy_order=order,
        kind="upwind_fd",
    )


def make_fourier_operator(grid: PeriodicGrid) -> OperatorSet:
    """Fourier pseudospectral differentiation; the Nyquist mode derivative is zero."""
    if grid.n % 2:
        raise ValueError("Fourier differentiation needs an even number of points")
    k = grid.wavenumbers()
    k[grid.n // 2] = 0.0
    d = SpectralOperator(grid.n, 1j * k)
    return OperatorSet(
        grid=grid,
        d_plus=d,
        d_minus=d,
        d_central=d,
        norm_weights=np.full(grid.n, grid.dx),
        accuracy_order=grid.n,
        kind="fourier",
    )


def make_operators(grid: PeriodicGrid, kind: str = "upwind_fd", order: int = 8) -> OperatorSet:
    if kind in ("upwind_fd", "upwind", "fd"):
        return make_upwind_operators(grid, order)
    if kind == "fourier":
        return make_fourier_operator(grid)
    raise ValueError(f"unknown operator kind {kind!r}")


def check_operator_set(ops: OperatorSet, n_probes: int = 100, seed: int = 0) -> dict:
    """Evaluate the SBP identities of ``ops``; JSON-serializable report.

    Entrywise residuals use the dense matrices; quadratic-form residuals use
    random probe vectors.
    """
    M = np.diag(ops.norm_weights)
    Dp, Dm, D = ops.d_plus.dense(), ops.d_minus.dense(), ops.d_central.dense()
    ones = np.ones(ops.n)
    rng = np.random.default_rng(seed)
    probes = rng.standard_normal((n_probes, ops.n))
    probes_w = rng.standard_normal((n_probes, ops.n))

    def form(A, v, w):
        return np.einsum("pi,ij,pj->p", w, A, v)

    skew = M @ D + D.T @ M
    upwind = M @ Dp + Dm.T @ M
    vnorm = np.linalg.norm(probes, axis=1)
    wnorm = np.linalg.norm(probes_w, axis=1)
    diss = form(M @ (Dp - Dm), probes, probes) / vnorm**2
    checks = {
        "central_skew_entrywise": (np.abs(skew).max() / np.abs(D).max(), 1e-13),
        "upwind_entrywise": (np.abs(upwind).max() / np.abs(Dp).max(), 1e-13),
        "central_skew_form": (np.max(np.abs(form(skew, probes, probes_w)) / (vnorm * wnorm)), 1e-12),
        "upwind_form": (np.max(np.abs(form(upwind, probes, probes_w)) / (vnorm * wnorm)), 1e-12),
        "quadratic_skew_form": (np.max(np.abs(form(M @ D, probes, probes)) / vnorm**2), 1e-12),
        "dissipation_max": (float(diss.max()), 1e-12),
        "consistency": (
            max(np.abs(D @ ones).max(), np.abs(Dp @ ones).max(), np.abs(Dm @ ones).max()) * ops.grid.dx,
            1e-12,
        ),
    }
    report = {"operator": ops.describe(), "checks": {}}
    for name, (value, tol) in checks.items():
        report["checks"][name] = {"value": float(value), "tol": tol, "ok": bool(value <= tol)}
    report["ok"] = all(c["ok"] for c in report["checks"].values())
    return report
