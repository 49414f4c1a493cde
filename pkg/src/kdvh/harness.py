"""Experiment drivers: asymptotic-preserving sweeps, asymptotic-accuracy studies,
long-time error growth, and CSV/JSON output with provenance."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .imex.stepper import BACKENDS, KdvhProblem, KdvProblem, StageSolverCache, integrate
from .imex.tableaux import get_tableau
from .model import KdvhState, energy_kdvh, kdv_soliton, well_prepared_init
from .sbp import OperatorSet, PeriodicGrid, make_grid, make_operators
from .waves import TravelingWaveParams, petviashvili_solve, tw_auxiliaries

__all__ = [
    "DEFAULT_TAUS",
    "AP_SOLITON_SPEED",
    "AP_FINAL_TIME",
    "GROWTH_SOLITON_SPEED",
    "RunConfig",
    "flatten_config",
    "ApTableRow",
    "AaCurve",
    "ErrorGrowthSeries",
    "eoc",
    "loglog_slope",
    "ap_errors",
    "kdv_reference",
    "ap_sweep",
    "traveling_wave_reference",
    "aa_study",
    "error_growth",
    "periodic_soliton",
    "write_csv",
    "write_meta",
]

DEFAULT_TAUS = (1e-1, 1e-3, 1e-5, 1e-7, 1e-9)
# soliton speed that reproduces the published AP-table magnitudes (amplitude 3.6)
AP_SOLITON_SPEED = 1.2
# printed as 16.67; the run ends with a step of dt/3 when dt = 0.005
AP_FINAL_TIME = 50.0 / 3.0
# long-time error growth: fast enough that the relaxed error outgrows its O(tau)
# offset, slow enough that the unrelaxed phase error does not saturate by t = 333
GROWTH_SOLITON_SPEED = 0.9

_SECTIONS = {
    "run": ("model", "method", "name", "backend"),
    "grid": ("x_left", "x_right", "n"),
    "operator": ("kind", "order"),
    "time": ("tau", "dt", "t_final", "relaxation"),
    "initial": ("c", "x0"),
    "output": ("out_dir",),
}
_RENAME = {"kind": "operator", "c": "soliton_c"}


@dataclass
class RunConfig:
    """Everything needed to reproduce one run or sweep."""

    model: str = "kdvh"
    method: str = "ARS(2,2,2)"
    x_left: float = -40.0
    x_right: float = 40.0
    n: int = 1024
    operator: str = "upwind_fd"
    order: int = 8
    tau: float = 1e-5
    dt: float = 0.005
    t_final: float = AP_FINAL_TIME
    soliton_c: float = AP_SOLITON_SPEED
    x0: float = 0.0
    relaxation: bool = False
    backend: str = "fft"
    out_dir: str = "."
    name: str = "run"

    def validate(self) -> RunConfig:
        if self.model not in ("kdv", "kdvh"):
            raise ConfigError(f"model must be 'kdv' or 'kdvh', got {self.model!r}")
        try:
            get_tableau(self.method)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
        if self.operator not in ("upwind_fd", "fourier"):
            raise ConfigError(f"unknown operator kind {self.operator!r}")
        if self.operator == "upwind_fd" and not 1 <= int(self.order) <= 8:
            raise ConfigError(f"upwind order must be in 1..8, got {self.order}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if not (self.x_right > self.x_left and int(self.n) >= 4):
            raise ConfigError("grid needs x_right > x_left and n >= 4")
        if self.model == "kdvh" and not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.t_final >= 0:
            raise ConfigError("t_final must be nonnegative")
        if not self.soliton_c > 0:
            raise ConfigError("soliton speed must be positive")
        return self

    @classmethod
    def from_mapping(cls, data: dict, **overrides) -> RunConfig:
        """Build from a flat or sectioned mapping (as read from a TOML file)."""
        flat = flatten_config(data)
        flat.update({k: v for k, v in overrides.items() if v is not None})
        try:
            cfg = cls(**flat)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cfg.validate()

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in ("out_dir", "name")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def grid(self) -> PeriodicGrid:
        return make_grid(self.x_left, self.x_right, int(self.n))

    def operators(self) -> OperatorSet:
        return make_operators(self.grid(), self.operator, int(self.order))

    def tableau(self):
        return get_tableau(self.method)


def flatten_config(data: dict) -> dict:
    """Map a sectioned configuration onto RunConfig field names.

    Top-level sections other than the known ones (for example ``[study]``) are
    ignored here; unknown keys inside known sections are errors.
    """
    names = {f.name for f in dataclasses.fields(RunConfig)}
    flat: dict = {}
    for key, val in data.items():
        if isinstance(val, dict):
            if key not in _SECTIONS:
                continue
            for sub, subval in val.items():
                if sub not in _SECTIONS[key]:
                    raise ConfigError(f"unknown key {key}.{sub}")
                flat[_RENAME.get(sub, sub)] = subval
        else:
            key = _RENAME.get(key, key)
            if key not in names:
                raise ConfigError(f"unknown key {key!r}")
            flat[key] = val
    return flat


@dataclass
class ApTableRow:
    tau: float
    err_u: float
    err_v: float
    err_w: float
    eoc_u: float | None = None
    eoc_v: float | None = None
    eoc_w: float | None = None


def eoc(errors, params) -> list:
    """Pairwise ``log(e_prev/e_cur) / log(p_prev/p_cur)``; None where undefined."""
    errors, params = list(errors), list(params)
    if len(errors) != len(params):
        raise ValueError("errors and params differ in length")
    out = []
    for (e0, e1), (p0, p1) in zip(zip(errors, errors[1:]), zip(params, params[1:])):
        if e0 is None or e1 is None or e0 <= 0 or e1 <= 0 or p0 <= 0 or p1 <= 0 or p0 == p1:
            out.append(None)
        else:
            out.append(math.log(e0 / e1) / math.log(p0 / p1))
    return out


def loglog_slope(t, err, t_min: float | None = None) -> float:
    """Least-squares slope of ``log err`` against ``log t`` over ``t >= t_min``.

    By default the fit covers the final decade, ``[t_end / 10, t_end]``.
    """
    t, err = np.asarray(t, dtype=float), np.asarray(err, dtype=float)
    if t_min is None:
        t_min = t[-1] / 10.0
    mask = (t >= t_min) & (t > 0) & (err > 0)
    if mask.sum() < 2:
        raise ValueError("need at least two positive samples to fit a slope")
    return float(np.polyfit(np.log(t[mask]), np.log(err[mask]), 1)[0])


def ap_errors(ops: OperatorSet, u, v, w, eta) -> tuple[float, float, float]:
    """M-norm distances of ``(u, v, w)`` to ``(eta, D_- eta, D D_- eta)``."""
    dm = ops.d_minus @ eta
    return ops.norm(u - eta), ops.norm(v - dm), ops.norm(w - ops.d_central @ dm)


def kdv_reference(cfg: RunConfig, ops: OperatorSet | None = None) -> np.ndarray:
    """KdV solution at ``t_final`` with the same method, grid, and step as the sweep."""
    ops = ops or cfg.operators()
    eta0 = kdv_soliton(cfg.soliton_c, ops.grid.nodes, x0=cfg.x0)
    problem = KdvProblem(ops)
    cache = StageSolverCache(problem, cfg.backend)
    return integrate(cfg.tableau(), problem, eta0, cfg.dt, cfg.t_final, cache=cache).q


def _ap_point(cfg: RunConfig, tau: float, eta: np.ndarray) -> tuple[float, float, float]:
    ops = cfg.operators()
    s0 = well_prepared_init(ops, kdv_soliton(cfg.soliton_c, ops.grid.nodes, x0=cfg.x0), tau)
    problem = KdvhProblem(ops, tau)
    cache = StageSolverCache(problem, cfg.backend)
    try:
        q = integrate(cfg.tableau(), problem, s0.as_vector(), cfg.dt, cfg.t_final, cache=cache).q
    except NumericalError as exc:
        raise type(exc)(f"tau = {tau:g}: {exc}") from exc
    if not np.all(np.isfinite(q)):
        raise NumericalError(f"tau = {tau:g}: solution is not finite")
    u, v, w = np.split(q, 3)
    return ap_errors(ops, u, v, w, eta)


def ap_sweep(cfg: RunConfig, taus=DEFAULT_TAUS, workers: int = 1,
             reference: np.ndarray | None = None) -> list[ApTableRow]:
    """Errors of KdVH runs against one shared KdV reference, with EOCs in tau."""
    cfg.validate()
    taus = [float(t) for t in taus]
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ConfigError("tau list must be strictly decreasing")
    eta = kdv_reference(cfg) if reference is None else np.asarray(reference, dtype=float)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            errs = list(pool.map(_ap_point, [cfg] * len(taus), taus, [eta] * len(taus)))
    else:
        errs = [_ap_point(cfg, tau, eta) for tau in taus]
    cols = list(zip(*errs))
    eocs = [eoc(col, taus) for col in cols]
    rows = []
    for i, (tau, (eu, ev, ew)) in enumerate(zip(taus, errs)):
        row = ApTableRow(tau, eu, ev, ew)
        if i > 0:
            row.eoc_u, row.eoc_v, row.eoc_w = eocs[0][i - 1], eocs[1][i - 1], eocs[2][i - 1]
        rows.append(row)
    return rows


def _shift(u: np.ndarray, grid: PeriodicGrid, distance: float) -> np.ndarray:
    """Translate a periodic grid function by ``distance`` (spectral interpolation)."""
    k = 2.0 * np.pi * np.fft.rfftfreq(grid.n, d=grid.dx)
    uh = np.fft.rfft(u) * np.exp(-1j * k * distance)
    if grid.n % 2 == 0:
        uh[-1] = uh[-1].real * np.cos(k[-1] * distance)
    return np.fft.irfft(uh, n=grid.n)


def _solitary_wave(cfg: RunConfig, tau: float, fine_factor: int, tol: float = 1e-12):
    """Petviashvili profile and its auxiliaries on the grid refined by ``fine_factor``."""
    fine = make_grid(cfg.x_left, cfg.x_right, int(cfg.n) * fine_factor)
    p = TravelingWaveParams(cfg.soliton_c, tau)
    guess = kdv_soliton(cfg.soliton_c, fine.nodes, x0=cfg.x0)
    res = petviashvili_solve(fine, p, guess, tol=tol)
    if res.residual > max(tol, 1e-9):
        raise NumericalError(
            f"Petviashvili reference did not converge (residual {res.residual:.3e} after {res.iterations} iterations)")
    v, w = tw_auxiliaries(fine, p, res.profile)
    return fine, (res.profile, v, w)


def traveling_wave_reference(cfg: RunConfig, tau: float, t: float, fine_factor: int = 2) -> KdvhState:
    """Solitary KdVH wave at time ``t`` on the run grid.

    The profile is computed by Petviashvili iteration on a grid refined by
    ``fine_factor``, translated by ``c t`` spectrally, and restricted to the
    run grid. The auxiliaries follow from the traveling-wave constraints.
    """
    fine, fields = _solitary_wave(cfg, tau, fine_factor)
    return KdvhState(*(_shift(f, fine, cfg.soliton_c * t)[::fine_factor] for f in fields), tau)


@dataclass
class AaCurve:
    method: str
    tau: float
    dts: list
    errors: list  # per dt: (err_u, err_v, err_w)
    slopes: list = field(default_factory=list)  # per component, fit over all dts

    def as_rows(self):
        return [(self.method, self.tau, dt, *e) for dt, e in zip(self.dts, self.errors)]


def aa_study(cfg: RunConfig, methods=("AGSA(3,4,2)", "SSP3-ImEx(3,4,3)", "ARS(2,2,2)", "ARK3(2)4L[2]SA"),
             taus=(1e-5, 1e-9), dts=(0.02, 0.01, 0.005, 0.0025), fine_factor: int = 2) -> list[AaCurve]:
    """Error against the exact traveling wave as ``dt`` is refined, per method and tau."""
    cfg.validate()
    ops = cfg.operators()
    curves = []
    for tau in taus:
        fine, fields = _solitary_wave(cfg, tau, fine_factor)
        init = KdvhState(*(f[::fine_factor] for f in fields), tau)
        ref = KdvhState(*(_shift(f, fine, cfg.soliton_c * cfg.t_final)[::fine_factor] for f in fields), tau)
        problem = KdvhProblem(ops, tau)
        for method in methods:
            tab = get_tableau(method)
            errs = []
            for dt in dts:
                cache = StageSolverCache(problem, cfg.backend)
                q = integrate(tab, problem, init.as_vector(), dt, cfg.t_final, cache=cache).q
                u, v, w = np.split(q, 3)
                errs.append((ops.norm(u - ref.u), ops.norm(v - ref.v), ops.norm(w - ref.w)))
            slopes = []
            if len(dts) > 1:
                for comp in range(3):
                    e = np.array([x[comp] for x in errs])
                    slopes.append(float(np.polyfit(np.log(dts), np.log(e), 1)[0]))
            curves.append(AaCurve(tab.name, tau, list(dts), errs, slopes))
    return curves


def periodic_soliton(cfg: RunConfig, x: np.ndarray, t: float) -> np.ndarray:
    """KdV soliton at time ``t`` with its center wrapped into the periodic domain."""
    length = cfg.x_right - cfg.x_left
    xi = (x - cfg.x0 - cfg.soliton_c * t - cfg.x_left) % length + cfg.x_left
    return kdv_soliton(cfg.soliton_c, xi)


@dataclass
class ErrorGrowthSeries:
    t: np.ndarray
    error: np.ndarray
    drift: np.ndarray
    gamma: np.ndarray
    relaxation: bool
    tau: float

    def slope(self, t_min: float | None = None) -> float:
        return loglog_slope(self.t, self.error, t_min)


def error_growth(cfg: RunConfig, reference: str = "kdv", fine_factor: int = 4) -> ErrorGrowthSeries:
    """Per-step error of a KdVH run, with the first record at ``t = 0``.

    ``reference = "kdv"`` compares ``u`` with the analytic KdV soliton starting
    from well-prepared data. ``reference = "kdvh"`` starts from the solitary
    KdVH wave computed by Petviashvili iteration and compares with its exact
    translation.
    """
    cfg.validate()
    ops = cfg.operators()
    x = ops.grid.nodes
    if reference == "kdv":
        s0 = well_prepared_init(ops, kdv_soliton(cfg.soliton_c, x, x0=cfg.x0), cfg.tau)

        def exact(t):
            return periodic_soliton(cfg, x, t)
    elif reference == "kdvh":
        fine, fields = _solitary_wave(cfg, cfg.tau, fine_factor)
        s0 = KdvhState(*(f[::fine_factor] for f in fields), cfg.tau)
        profile = fields[0]

        def exact(t):
            return _shift(profile, fine, cfg.soliton_c * t)[::fine_factor]
    else:
        raise ConfigError(f"reference must be 'kdv' or 'kdvh', got {reference!r}")

    problem = KdvhProblem(ops, cfg.tau)
    cache = StageSolverCache(problem, cfg.backend)
    I0 = energy_kdvh(ops, s0)
    n = ops.n
    ts, errs, drifts, gammas = [0.0], [ops.norm(s0.u - exact(0.0))], [0.0], [1.0]

    def record(t, q, gamma):
        ts.append(t)
        errs.append(ops.norm(q[:n] - exact(t)))
        energy = 0.5 * float(np.dot(problem.energy_weights * q, q))
        drifts.append(abs(energy - I0) / abs(I0))
        gammas.append(gamma)

    integrate(cfg.tableau(), problem, s0.as_vector(), cfg.dt, cfg.t_final,
              relaxation=cfg.relaxation, cache=cache, callback=record)
    return ErrorGrowthSeries(np.array(ts), np.array(errs), np.array(drifts), np.array(gammas),
                             cfg.relaxation, cfg.tau)


def _fmt(val) -> str:
    if val is None:
        return ""
    if isinstance(val, (float, np.floating)):
        return f"{float(val):.17e}"
    return str(val)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])
    return path


def write_meta(path, cfg: RunConfig, **extra) -> Path:
    """Provenance sidecar: configuration, its hash, method and operator description."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "method": cfg.tableau().name,
        "operator": {"kind": cfg.operator, "order": cfg.order},
    }
    meta.update(extra)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default))
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")
