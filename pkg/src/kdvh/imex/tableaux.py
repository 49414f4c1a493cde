"""Butcher tableau pairs for additive (implicit-explicit) Runge-Kutta methods.

Coefficients are kept as exact expression strings (rationals, ``sqrt``) and
evaluated once to floating point. Structural flags are computed from the
coefficients, never stored.
"""

from __future__ import annotations

import ast
import json
import math
import operator
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = [
    "ImexTableau",
    "registry",
    "get_tableau",
    "method_names",
    "classify",
    "order_condition_residuals",
    "verified_order",
    "dump_registry",
]

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}


def _evaluate(expr: str, env: dict) -> Fraction | float:
    """Evaluate a coefficient expression; rationals stay exact until ``sqrt``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, int):
                return Fraction(node.value)
            if isinstance(node.value, float):
                return Fraction(repr(node.value))
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            val = ev(node.operand)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.Name) and node.id in env:
            return env[node.id]
        if isinstance(node, ast.Call) and getattr(node.func, "id", None) == "sqrt" and len(node.args) == 1:
            return math.sqrt(ev(node.args[0]))
        raise ValueError(f"unsupported coefficient expression {expr!r}")

    return ev(ast.parse(expr, mode="eval"))


@dataclass(frozen=True)
class ImexTableau:
    name: str
    order: int
    a_explicit: np.ndarray
    b_explicit: np.ndarray
    c_explicit: np.ndarray
    a_implicit: np.ndarray
    b_implicit: np.ndarray
    c_implicit: np.ndarray
    exact: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def s(self) -> int:
        return len(self.b_explicit)

    @property
    def flags(self) -> dict:
        return classify(self)

    @property
    def is_gsa(self) -> bool:
        return self.flags["gsa"]

    @property
    def is_sa(self) -> bool:
        return self.flags["sa"]


def _build(name: str, order: int, params: dict[str, str], spec: dict[str, list]) -> ImexTableau:
    env: dict = {}
    for key, expr in params.items():
        env[key] = _evaluate(expr, env)

    def arr(rows):
        return np.array([[float(_evaluate(str(x), env)) for x in row] for row in rows])

    def vec(xs):
        return np.array([float(_evaluate(str(x), env)) for x in xs])

    ae, ai = arr(spec["A_explicit"]), arr(spec["A_implicit"])
    exact = {"params": dict(params), **{k: v for k, v in spec.items()}}
    return ImexTableau(
        name=name,
        order=order,
        a_explicit=ae,
        b_explicit=vec(spec["b_explicit"]),
        c_explicit=vec(spec["c_explicit"]) if "c_explicit" in spec else ae.sum(axis=1),
        a_implicit=ai,
        b_implicit=vec(spec["b_implicit"]),
        c_implicit=vec(spec["c_implicit"]) if "c_implicit" in spec else ai.sum(axis=1),
        exact=exact,
    )


_DEFINITIONS = [
    # -------------------------------- type I --------------------------------
    ("SSP2-ImEx(2,2,2)", 2, {"g": "1 - 1/sqrt(2)"}, {
        "A_explicit": [[0, 0], [1, 0]],
        "b_explicit": ["1/2", "1/2"],
        "c_explicit": [0, 1],
        "A_implicit": [["g", 0], ["1 - 2*g", "g"]],
        "b_implicit": ["1/2", "1/2"],
        "c_implicit": ["g", "1 - g"],
    }),
    ("SSP2-ImEx(3,3,2)", 2, {}, {
        "A_explicit": [[0, 0, 0], ["1/2", 0, 0], ["1/2", "1/2", 0]],
        "b_explicit": ["1/3", "1/3", "1/3"],
        "c_explicit": [0, "1/2", 1],
        "A_implicit": [["1/4", 0, 0], [0, "1/4", 0], ["1/3", "1/3", "1/3"]],
        "b_implicit": ["1/3", "1/3", "1/3"],
        "c_implicit": ["1/4", "1/4", 1],
    }),
    ("AGSA(3,4,2)", 2, {
        "ea21": "-139833537/38613965",
        "ea31": "85870407/49798258",
        "ea32": "-121251843/1756367063",
        "eb2": "1/6",
        "eb3": "2/3",
        "eb1": "1 - eb2 - eb3",
        "a11": "168999711/74248304",
        "a21": "44004295/24775207",
        "g": "202439144/118586105",
        "a31": "-6418119/169001713",
        "a32": "-748951821/1043823139",
        "a33": "12015439/183058594",
        "b2": "1/3",
        "b3": "0",
        "b1": "1 - g - b2 - b3",
    }, {
        "A_explicit": [[0, 0, 0, 0], ["ea21", 0, 0, 0], ["ea31", "ea32", 0, 0], ["eb1", "eb2", "eb3", 0]],
        "b_explicit": ["eb1", "eb2", "eb3", 0],
        "A_implicit": [["a11", 0, 0, 0], ["a21", "g", 0, 0], ["a31", "a32", "a33", 0], ["b1", "b2", "b3", "g"]],
        "b_implicit": ["b1", "b2", "b3", "g"],
    }),
    ("SSP3-ImEx(3,4,3)", 3, {
        "al": "0.241694260788",
        "be": "0.0604235651970",
        "et": "0.12915286960590",
    }, {
        "A_explicit": [[0, 0, 0, 0], [0, 0, 0, 0], [0, 1, 0, 0], [0, "1/4", "1/4", 0]],
        "b_explicit": [0, "1/6", "1/6", "2/3"],
        "c_explicit": [0, 0, 1, "1/2"],
        "A_implicit": [["al", 0, 0, 0], ["-al", "al", 0, 0], [0, "1 - al", "al", 0],
                       ["be", "et", "1/2 - be - et - al", "al"]],
        "b_implicit": [0, "1/6", "1/6", "2/3"],
        "c_implicit": ["al", 0, 1, "1/2"],
    }),
    # -------------------------------- type II -------------------------------
    ("ARS(2,2,2)", 2, {"g": "1 - 1/sqrt(2)", "d": "1 - 1/(2*g)"}, {
        "A_explicit": [[0, 0, 0], ["g", 0, 0], ["d", "1 - d", 0]],
        "b_explicit": ["d", "1 - d", 0],
        "c_explicit": [0, "g", 1],
        "A_implicit": [[0, 0, 0], [0, "g", 0], [0, "1 - g", "g"]],
        "b_implicit": [0, "1 - g", "g"],
        "c_implicit": [0, "g", 1],
    }),
    ("ARS(4,4,3)", 3, {}, {
        "A_explicit": [[0, 0, 0, 0, 0], ["1/2", 0, 0, 0, 0], ["11/18", "1/18", 0, 0, 0],
                       ["5/6", "-5/6", "1/2", 0, 0], ["1/4", "7/4", "3/4", "-7/4", 0]],
        "b_explicit": ["1/4", "7/4", "3/4", "-7/4", 0],
        "c_explicit": [0, "1/2", "2/3", "1/2", 1],
        "A_implicit": [[0, 0, 0, 0, 0], [0, "1/2", 0, 0, 0], [0, "1/6", "1/2", 0, 0],
                       [0, "-1/2", "1/2", "1/2", 0], [0, "3/2", "-3/2", "1/2", "1/2"]],
        "b_implicit": [0, "3/2", "-3/2", "1/2", "1/2"],
        "c_implicit": [0, "1/2", "2/3", "1/2", 1],
    }),
    ("ARK3(2)4L[2]SA", 3, {
        "g": "1767732205903/4055673282236",
        "b1": "1471266399579/7840856788654",
        "b2": "-4482444167858/7529755066697",
        "b3": "11266239266428/11593286722821",
    }, {
        "A_explicit": [
            [0, 0, 0, 0],
            ["1767732205903/2027836641118", 0, 0, 0],
            ["5535828885825/10492691773637", "788022342437/10882634858940", 0, 0],
            ["6485989280629/16251701735622", "-4246266847089/9704473918619",
             "10755448449292/10357097424841", 0],
        ],
        "b_explicit": ["b1", "b2", "b3", "g"],
        "c_explicit": [0, "1767732205903/2027836641118", "3/5", 1],
        "A_implicit": [
            [0, 0, 0, 0],
            ["g", "g", 0, 0],
            ["2746238789719/10658868560708", "-640167445237/6845629431997", "g", 0],
            ["b1", "b2", "b3", "g"],
        ],
        "b_implicit": ["b1", "b2", "b3", "g"],
        "c_implicit": [0, "1767732205903/2027836641118", "3/5", 1],
    }),
    ("ARK4(3)6L[2]SA", 4, {
        "b1": "82889/524892",
        "b3": "15625/83664",
        "b4": "69875/102672",
        "b5": "-2260/8211",
    }, {
        "A_explicit": [
            [0, 0, 0, 0, 0, 0],
            ["1/2", 0, 0, 0, 0, 0],
            ["13861/62500", "6889/62500", 0, 0, 0, 0],
            ["-116923316275/2393684061468", "-2731218467317/15368042101831",
             "9408046702089/11113171139209", 0, 0, 0],
            ["-451086348788/2902428689909", "-2682348792572/7519795681897",
             "12662868775082/11960479115383", "3355817975965/11060851509271", 0, 0],
            ["647845179188/3216320057751", "73281519250/8382639484533",
             "552539513391/3454668386233", "3354512671639/8306763924573", "4040/17871", 0],
        ],
        "b_explicit": ["b1", 0, "b3", "b4", "b5", "1/4"],
        "c_explicit": [0, "1/2", "83/250", "31/50", "17/20", 1],
        "A_implicit": [
            [0, 0, 0, 0, 0, 0],
            ["1/4", "1/4", 0, 0, 0, 0],
            ["8611/62500", "-1743/31250", "1/4", 0, 0, 0],
            ["5012029/34652500", "-654441/2922500", "174375/388108", "1/4", 0, 0],
            ["15267082809/155376265600", "-71443401/120774400", "730878875/902184768",
             "2285395/8070912", "1/4", 0],
            ["b1", 0, "b3", "b4", "b5", "1/4"],
        ],
        "b_implicit": ["b1", 0, "b3", "b4", "b5", "1/4"],
        "c_implicit": [0, "1/2", "83/250", "31/50", "17/20", 1],
    }),
]


@lru_cache(maxsize=None)
def registry() -> tuple[ImexTableau, ...]:
    """The eight registered method pairs, type I first."""
    return tuple(_build(*d) for d in _DEFINITIONS)


def method_names() -> list[str]:
    return [t.name for t in registry()]


def _normalize(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def get_tableau(name: str) -> ImexTableau:
    key = _normalize(name)
    for t in registry():
        if _normalize(t.name) == key:
            return t
    raise KeyError(f"unknown method {name!r}; available: {', '.join(method_names())}")


def _close(a, b, tol=1e-14) -> bool:
    return bool(np.all(np.abs(np.asarray(a) - np.asarray(b)) <= tol * max(1.0, np.abs(b).max())))


# ----------------------------------------------------------------------------
# order conditions for additive RK methods via bicolored rooted trees
# ----------------------------------------------------------------------------

def _trees(nodes: int, colors: int = 2) -> list:
    """Unlabelled rooted trees with colored nodes, as (color, sorted children)."""
    return _trees_cached(nodes, colors)


@lru_cache(maxsize=None)
def _trees_cached(nodes: int, colors: int) -> list:
    if nodes == 1:
        return [(c, ()) for c in range(colors)]
    out = set()
    for root in range(colors):
        for forest in _forests(nodes - 1, colors):
            out.add((root, forest))
    return sorted(out)


@lru_cache(maxsize=None)
def _forests(nodes: int, colors: int) -> tuple:
    """Multisets of trees with ``nodes`` nodes in total, as sorted tuples."""
    if nodes == 0:
        return ((),)
    result = set()
    for first in range(1, nodes + 1):
        for t in _trees_cached(first, colors):
            for rest in _forests(nodes - first, colors):
                result.add(tuple(sorted((t,) + rest)))
    return tuple(sorted(result))


def _density(tree) -> int:
    _, children = tree
    size, dens = _size(tree), 1
    for ch in children:
        dens *= _density(ch)
    return size * dens


def _size(tree) -> int:
    return 1 + sum(_size(ch) for ch in tree[1])


def order_condition_residuals(tab: ImexTableau, max_order: int = 4) -> dict[int, float]:
    """Largest order-condition residual among all bicolored trees of each order."""
    A = (tab.a_explicit, tab.a_implicit)
    b = (tab.b_explicit, tab.b_implicit)

    def psi(tree):
        out = np.ones(tab.s)
        for ch in tree[1]:
            out = out * (A[ch[0]] @ psi(ch))
        return out

    res = {}
    for p in range(1, max_order + 1):
        res[p] = max(abs(b[t[0]] @ psi(t) - 1.0 / _density(t)) for t in _trees(p))
    return res


def verified_order(tab: ImexTableau, tol: float = 1e-12, max_order: int = 4) -> int:
    res = order_condition_residuals(tab, max_order)
    p = 0
    for k in range(1, max_order + 1):
        if res[k] > tol:
            break
        p = k
    return p


def classify(tab: ImexTableau, tol: float = 1e-14) -> dict:
    """Structural classification; raises ``ValueError`` on an inconsistent tableau."""
    ae, ai = tab.a_explicit, tab.a_implicit
    if np.any(np.triu(ae) != 0):
        raise ValueError(f"{tab.name}: explicit matrix is not strictly lower triangular")
    if np.any(np.triu(ai, 1) != 0):
        raise ValueError(f"{tab.name}: implicit matrix is not lower triangular")
    # published irrational/decimal coefficients only hold row sums to ~1e-12
    if not _close(ae.sum(axis=1), tab.c_explicit, 1e-11) or not _close(ai.sum(axis=1), tab.c_implicit, 1e-11):
        raise ValueError(f"{tab.name}: row sums do not match abscissae")
    diag = np.diag(ai)
    if np.all(diag != 0):
        kind = "I"
    elif diag[0] == 0 and np.all(diag[1:] != 0):
        kind = "II"
    else:
        raise ValueError(f"{tab.name}: implicit part is neither type I nor type II")
    sa = _close(ai[-1], tab.b_implicit, tol)
    fsal = _close(ae[-1], tab.b_explicit, tol)
    return {
        "type": kind,
        "sa": sa,
        "fsal": fsal,
        "gsa": sa and fsal,
        "order_verified": verified_order(tab),
    }


def dump_registry(indent: int = 2) -> str:
    """JSON listing of all tableaux with the exact coefficient strings."""
    out = []
    for t in registry():
        entry = {"name": t.name, "order": t.order, "classification": classify(t)}
        entry.update({k: [[str(x) for x in row] if isinstance(row, list) else str(row) for row in v]
                      if isinstance(v, list) else v for k, v in t.exact.items()})
        out.append(entry)
    return json.dumps(out, indent=indent)

