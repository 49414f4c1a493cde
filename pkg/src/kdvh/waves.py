"""Traveling waves of KdVH: phase-plane analysis and solitary-wave profiles.

With the ansatz ``u(x, t) = u~(x - ct)`` the system reduces to

    u~' = v~ / (1 + c tau (u~ - c)),     v~' = (c - u~/2) u~ / (1 + c tau),

which has the first integral :func:`first_integral`. Solitary waves are
homoclinic orbits of the saddle at the origin; they are computed accurately
with a Petviashvili iteration on a Fourier grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, NumericalError
from .sbp import OperatorSet, PeriodicGrid

__all__ = [
    "TravelingWaveParams",
    "PhasePoint",
    "OrbitConfig",
    "OrbitResult",
    "PetviashviliResult",
    "SingularLineError",
    "tw_vector_field",
    "first_integral",
    "singular_distance",
    "classify_equilibria",
    "integrate_orbit",
    "homoclinic_launch_points",
    "find_homoclinic",
    "petviashvili_solve",
    "tw_auxiliaries",
    "tw_constraint_residual",
    "flux_jacobian",
    "flux_jacobian_eigs",
    "phase_portrait_field",
    "comparison_curve",
    "write_orbit_csv",
    "write_field_csv",
]

SINGULAR_TOL = 1e-10


class SingularLineError(NumericalError):
    """The phase point is within tolerance of ``1 + c tau (u~ - c) = 0``."""


@dataclass(frozen=True)
class TravelingWaveParams:
    """Wave speed ``c`` (signed) and relaxation parameter ``tau``.

    ``tau = 0`` is admitted and gives the KdV traveling-wave equations.
    """

    c: float
    tau: float

    def __post_init__(self):
        if not (math.isfinite(self.c) and math.isfinite(self.tau)):
            raise ValueError("c and tau must be finite")
        if self.tau < 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")

    @property
    def alpha(self) -> float:
        return self.c * self.tau

    @property
    def singular_u(self) -> float | None:
        """``u~`` on the singular line, or None when ``c tau = 0``."""
        if self.alpha == 0:
            return None
        return self.c - 1.0 / self.alpha


@dataclass(frozen=True)
class PhasePoint:
    u_tilde: float
    v_tilde: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u_tilde, self.v_tilde])


def _uv(pt):
    if isinstance(pt, PhasePoint):
        return pt.u_tilde, pt.v_tilde
    u, v = pt
    return u, v


def singular_distance(p: TravelingWaveParams, pt) -> float:
    """Distance in ``u~`` to the singular line (``inf`` when there is none)."""
    u, _ = _uv(pt)
    if p.alpha == 0:
        return math.inf
    return abs(1.0 + p.alpha * (u - p.c)) / abs(p.alpha)


def tw_vector_field(p: TravelingWaveParams, pt) -> tuple[float, float]:
    """Right-hand side ``(u~', v~')``; raises SingularLineError near the singular line."""
    u, v = _uv(pt)
    den = 1.0 + p.alpha * (u - p.c)
    if p.alpha != 0 and abs(den) < SINGULAR_TOL * abs(p.alpha):
        raise SingularLineError(f"u~ = {u!r} is within {SINGULAR_TOL} of the singular line")
    return v / den, (p.c - 0.5 * u) * u / (1.0 + p.alpha)


def first_integral(p: TravelingWaveParams, pt) -> float:
    """``H = v~^2/2 - u~^2/(1 + c tau) (-c tau u~^2/8 + (3 c^2 tau - 1) u~/6 + c (1 - c^2 tau)/2)``."""
    u, v = _uv(pt)
    c, tau, a = p.c, p.tau, p.alpha
    poly = -a * u * u / 8.0 + (3.0 * c * c * tau - 1.0) * u / 6.0 + c * (1.0 - c * c * tau) / 2.0
    return 0.5 * v * v - u * u / (1.0 + a) * poly


def _h_magnitude(p: TravelingWaveParams, y) -> float:
    """Sum of the magnitudes of the terms of ``H``, the scale of its roundoff."""
    u, v = y
    c, tau, a = p.c, p.tau, p.alpha
    terms = (abs(a * u * u / 8.0), abs((3.0 * c * c * tau - 1.0) * u / 6.0), abs(c * (1.0 - c * c * tau) / 2.0))
    return 0.5 * v * v + u * u / abs(1.0 + a) * sum(terms)


def _jacobian(p: TravelingWaveParams, u: float, v: float) -> np.ndarray:
    den = 1.0 + p.alpha * (u - p.c)
    return np.array([
        [-v * p.alpha / den ** 2, 1.0 / den],
        [(p.c - u) / (1.0 + p.alpha), 0.0],
    ])


def _kind(eigs: np.ndarray) -> str:
    scale = max(np.abs(eigs).max(), 1e-300)
    re, im = eigs.real, eigs.imag
    if np.all(np.abs(im) <= 1e-12 * scale):
        if re.min() < 0 < re.max():
            return "saddle"
        return "node"
    if np.all(np.abs(re) <= 1e-12 * scale):
        return "center"
    return "focus"


def classify_equilibria(p: TravelingWaveParams) -> dict:
    """Eigenvalues and type of the equilibria ``(0, 0)`` and ``(2c, 0)``."""
    out = {}
    for label, u in (("origin", 0.0), ("crest", 2.0 * p.c)):
        if singular_distance(p, (u, 0.0)) < SINGULAR_TOL:
            out[label] = {"point": (u, 0.0), "eigenvalues": None, "kind": "singular"}
            continue
        eigs = np.linalg.eigvals(_jacobian(p, u, 0.0))
        out[label] = {"point": (u, 0.0), "eigenvalues": eigs, "kind": _kind(eigs)}
    out["origin_is_saddle"] = out["origin"]["kind"] == "saddle"
    return out


@dataclass
class OrbitConfig:
    """Step control for :func:`integrate_orbit`.

    ``h_tol`` bounds the first-integral drift per unit of ``xi``, so the total
    drift is at most ``h_tol`` times the orbit length.
    """

    h0: float = 1e-2
    h_min: float = 1e-12
    h_max: float = 0.1
    h_tol: float = 1e-12
    max_displacement: float = 0.02
    xi_max: float = 500.0
    bound: float = 1e3
    max_steps: int = 2_000_000


@dataclass
class OrbitResult:
    samples: np.ndarray
    classification: str
    H_drift: float
    H0: float
    length: float

    @property
    def xi(self):
        return self.samples[:, 0]

    @property
    def u_tilde(self):
        return self.samples[:, 1]

    @property
    def v_tilde(self):
        return self.samples[:, 2]


def _rk4(p, y, h):
    k1 = np.array(tw_vector_field(p, y))
    k2 = np.array(tw_vector_field(p, y + 0.5 * h * k1))
    k3 = np.array(tw_vector_field(p, y + 0.5 * h * k2))
    k4 = np.array(tw_vector_field(p, y + h * k3))
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_orbit(p: TravelingWaveParams, start, config: OrbitConfig | None = None,
                    direction: float = 1.0) -> OrbitResult:
    """Integrate a phase-plane orbit with classical RK4 and first-integral step control.

    A step is rejected and halved when it changes ``H`` by more than
    ``h_tol * h * max(1, |H0|)`` plus the roundoff floor of evaluating ``H``.
    The orbit stops when it closes (``periodic``, or
    ``homoclinic`` when it started next to the saddle), when the step size
    underflows or the singular line is reached (``singular_hit``), or when it
    leaves the bounding box or exceeds ``xi_max`` (``escaped``). A step-size
    underflow away from the singular line raises ConvergenceError.
    """
    cfg = config or OrbitConfig()
    y0 = np.array(_uv(start), dtype=float)
    if singular_distance(p, y0) < SINGULAR_TOL:
        raise SingularLineError("start point lies on the singular line")
    H0 = first_integral(p, y0)
    h_scale = max(1.0, abs(H0))
    sign = 1.0 if direction >= 0 else -1.0

    eq = classify_equilibria(p)
    near_saddle = eq["origin_is_saddle"] and np.hypot(*y0) < 1e-6

    xi, y, h = 0.0, y0.copy(), cfg.h0
    samples = [(0.0, y0[0], y0[1])]
    drift = 0.0
    excursion = 0.0
    d_prev2 = d_prev = 0.0
    status = "escaped"
    for _ in range(cfg.max_steps):
        if xi >= cfg.xi_max:
            break
        try:
            speed = np.hypot(*tw_vector_field(p, y))
        except SingularLineError:
            status = "singular_hit"
            break
        h = min(h, cfg.h_max, cfg.max_displacement / max(speed, 1e-300))
        while True:
            if h < cfg.h_min:
                if singular_distance(p, y) > 1e-3:
                    raise ConvergenceError(f"orbit step size underflow at (u~, v~) = ({y[0]:.6g}, {y[1]:.6g})")
                status = "singular_hit"
                break
            try:
                y_new = _rk4(p, y, sign * h)
            except SingularLineError:
                h *= 0.5
                continue
            dH = abs(first_integral(p, y_new) - first_integral(p, y))
            floor = 8.0 * np.finfo(float).eps * max(_h_magnitude(p, y), _h_magnitude(p, y_new))
            if np.all(np.isfinite(y_new)) and dH <= cfg.h_tol * h * h_scale + floor:
                break
            h *= 0.5
        if status == "singular_hit":
            break
        xi += h
        y = y_new
        samples.append((sign * xi, y[0], y[1]))
        drift = max(drift, abs(first_integral(p, y) - H0))
        if np.abs(y).max() > cfg.bound:
            status = "escaped"
            break
        d = float(np.hypot(*(y - y0)))
        excursion = max(excursion, d)
        if excursion > 1e-3 and d_prev < d_prev2 and d_prev <= d and d_prev < 1e-2 * excursion:
            status = "homoclinic" if near_saddle else "periodic"
            break
        d_prev2, d_prev = d_prev, d
        h *= 1.5
    return OrbitResult(np.array(samples), status, drift, H0, xi)


def homoclinic_launch_points(p: TravelingWaveParams, eps: float = 1e-8) -> list[PhasePoint]:
    """Points ``+-eps`` along the unstable eigenvector of the saddle at the origin."""
    eq = classify_equilibria(p)
    if not eq["origin_is_saddle"]:
        raise ValueError("the origin is not a saddle for these parameters")
    vals, vecs = np.linalg.eig(_jacobian(p, 0.0, 0.0))
    vec = np.real(vecs[:, int(np.argmax(vals.real))])
    vec /= np.linalg.norm(vec)
    return [PhasePoint(*(s * eps * vec)) for s in (1.0, -1.0)]


def find_homoclinic(p: TravelingWaveParams, eps: float = 1e-8,
                    config: OrbitConfig | None = None) -> OrbitResult:
    """Launch from the saddle in both directions and return the homoclinic orbit."""
    results = [integrate_orbit(p, pt, config) for pt in homoclinic_launch_points(p, eps)]
    for r in results:
        if r.classification == "homoclinic":
            return r
    raise ConvergenceError(
        "no homoclinic orbit found; classifications " + ", ".join(r.classification for r in results))


@dataclass
class PetviashviliResult:
    profile: np.ndarray
    residual_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else math.inf


def _fourier_symbols(grid: PeriodicGrid):
    k = 2.0 * np.pi * np.fft.rfftfreq(grid.n, d=grid.dx)
    ik = 1j * k
    if grid.n % 2 == 0:
        ik[-1] = 0.0
    return ik


def petviashvili_solve(grid: PeriodicGrid, p: TravelingWaveParams, guess: np.ndarray,
                       tol: float = 1e-13, max_iter: int = 10_000,
                       stall_window: int = 200) -> PetviashviliResult:
    """Solitary-wave profile from ``L u = m(u)^2 N(u)``, ``m = <Lu, u> / <N(u), u>``.

    ``L = -D^2 + c/((1+c tau)(1-c^2 tau))`` and
    ``N(u) = u^2 / (2 (1+c tau)(1-c^2 tau)) + c tau/(1-c^2 tau) D(u Du)`` with
    Fourier differentiation. Iterates until ``||Lu - N(u)||_inf <= tol``. When
    the residual has reached its roundoff floor and stops improving for
    ``stall_window`` iterations the best iterate is returned unconverged.
    """
    c, tau, a = p.c, p.tau, p.alpha
    if grid.n % 2:
        raise ValueError("Fourier differentiation needs an even number of points")
    den = (1.0 + a) * (1.0 - c * c * tau)
    if abs(1.0 + a) < 1e-14 or abs(1.0 - c * c * tau) < 1e-14:
        raise ValueError("singular parameters: (1 + c tau)(1 - c^2 tau) = 0")
    lin = c / den
    ik = _fourier_symbols(grid)
    lsym = -(ik * ik) + lin
    if np.any(np.abs(lsym) < 1e-12 * max(1.0, np.abs(lsym).max())):
        raise ValueError("linear operator L is singular on this grid")
    coef_q = 1.0 / (2.0 * den)
    coef_d = a / (1.0 - c * c * tau)
    n = grid.n

    def deriv(f):
        return np.fft.irfft(ik * np.fft.rfft(f), n=n)

    def N(u):
        out = coef_q * u * u
        if coef_d != 0:
            out = out + coef_d * deriv(u * deriv(u))
        return out

    def L(u):
        return np.fft.irfft(lsym * np.fft.rfft(u), n=n)

    u = np.asarray(guess, dtype=float).copy()
    if u.shape != (n,):
        raise ValueError("guess does not match the grid")
    if not np.any(u):
        raise ValueError("guess is identically zero")
    history = []
    best, best_res, since_best, growth = u.copy(), math.inf, 0, 0
    for it in range(1, max_iter + 1):
        Nu = N(u)
        Lu = L(u)
        res = float(np.abs(Lu - Nu).max())
        history.append(res)
        if not math.isfinite(res):
            raise ConvergenceError(f"Petviashvili iteration produced non-finite values at iteration {it}")
        if res < best_res:
            best, best_res, since_best = u.copy(), res, 0
        else:
            since_best += 1
        growth = growth + 1 if len(history) > 1 and res > history[-2] else 0
        if res <= tol:
            return PetviashviliResult(u, history, it, True)
        if growth >= 50:
            raise ConvergenceError(f"Petviashvili residual grew for 50 consecutive iterations (residual {res:.3e})")
        if since_best >= stall_window:
            return PetviashviliResult(best, history, it, best_res <= tol)
        nu = float(np.dot(Nu, u))
        if abs(nu) <= 1e-12 * np.linalg.norm(Nu) * np.linalg.norm(u):
            raise ConvergenceError("stabilizing factor undefined: <N(u), u> = 0")
        m = float(np.dot(Lu, u)) / nu
        u = np.fft.irfft(m * m * np.fft.rfft(Nu) / lsym, n=n)
    return PetviashviliResult(best, history, max_iter, best_res <= tol)


def tw_auxiliaries(grid: PeriodicGrid, p: TravelingWaveParams, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Auxiliaries of a traveling wave ``u(x - ct)`` decaying at infinity.

    Integrating the ``u`` equation once gives ``w = c u - u^2/2``, and
    ``v = u' - alpha w'`` becomes ``v = (1 + alpha (u - c)) u'``. Both are
    pointwise, so no Fourier multiplier has to be inverted. ``u'`` is taken
    spectrally.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n,):
        raise ValueError("profile does not match the grid")
    du = np.fft.irfft(_fourier_symbols(grid) * np.fft.rfft(u), n=grid.n)
    v = (1.0 + p.alpha * (u - p.c)) * du
    w = p.c * u - 0.5 * u * u
    return v, w


def tw_constraint_residual(ops: OperatorSet, p: TravelingWaveParams, u, v, w) -> tuple[float, float]:
    """``(||v - (Du - alpha Dw)||_M, ||w - (1 + alpha) Dv||_M)``."""
    D = ops.d_central
    a = p.alpha
    r1 = np.asarray(v) - (D @ np.asarray(u) - a * (D @ np.asarray(w)))
    r2 = np.asarray(w) - (1.0 + a) * (D @ np.asarray(v))
    return ops.norm(r1), ops.norm(r2)


def flux_jacobian(tau: float, u: float = 0.0) -> np.ndarray:
    """Jacobian of the KdVH flux ``(u^2/2 + w, -v/tau, u/tau)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return np.array([[u, 0.0, 1.0], [0.0, -1.0 / tau, 0.0], [1.0 / tau, 0.0, 0.0]])


def flux_jacobian_eigs(tau: float) -> np.ndarray:
    """Sorted eigenvalues of the flux Jacobian at ``u = 0``."""
    return np.sort(np.linalg.eigvals(flux_jacobian(tau)).real)


def phase_portrait_field(p: TravelingWaveParams, u_range, v_range, nu: int = 41, nv: int = 41):
    """Vector field on a grid; NaN where the singular line is too close."""
    us = np.linspace(*u_range, nu)
    vs = np.linspace(*v_range, nv)
    U, V = np.meshgrid(us, vs, indexing="ij")
    DU = np.full_like(U, np.nan)
    DV = np.full_like(U, np.nan)
    H = np.empty_like(U)
    for idx in np.ndindex(U.shape):
        H[idx] = first_integral(p, (U[idx], V[idx]))
        try:
            DU[idx], DV[idx] = tw_vector_field(p, (U[idx], V[idx]))
        except SingularLineError:
            pass
    return U, V, DU, DV, H


def comparison_curve(x: np.ndarray) -> np.ndarray:
    """``(5/3) sqrt(sech(5x/3)) - 1``, a reference shape for a left-going wave."""
    return (5.0 / 3.0) * np.sqrt(1.0 / np.cosh(5.0 * np.asarray(x) / 3.0)) - 1.0


def write_orbit_csv(path, orbit: OrbitResult) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["xi", "u_tilde", "v_tilde"])
        for row in orbit.samples:
            wr.writerow([f"{val:.17e}" for val in row])


def write_field_csv(path, U, V, DU, DV, H) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["u_tilde", "v_tilde", "du", "dv", "H"])
        for row in zip(U.ravel(), V.ravel(), DU.ravel(), DV.ravel(), H.ravel()):
            wr.writerow([f"{val:.17e}" for val in row])
