"""Declarative problem files: expression strings differentiated by forward-mode dual numbers.

A problem file is JSON::

    {
      "name": "my_problem",
      "t0": 0.0, "tf": 5.0,
      "x0": [1.0, 0.0],
      "f": "0.5*(x1**2 + x2**2)",
      "g": "0.5*u**2",
      "h": ["x2", "(1 - x1**2)*x2 - x1 + u"],
      "alpha": -0.75, "beta": 0.75,
      "E": [[1, 0], [0, 1]], "e_f": [-1.0, 0.0]
    }

``f`` may use ``x1..xn``; ``g`` uses ``u``; ``h`` uses both.  ``alpha`` and
``beta`` are numbers, ``null`` (unbounded) or expressions in ``t``.
Expressions are arithmetic (``+ - * / **``), numeric literals, ``pi``, ``e``
and the functions in :data:`FUNCTIONS`.  Nothing else is accepted.
"""

from __future__ import annotations

import ast
import json
import math
from typing import Callable

import numpy as np

from .core import NlpProblem


class ExpressionError(ValueError):
    pass


class Dual:
    """``re + du * eps`` with ``eps**2 = 0``; components may themselves be duals.

    Nesting a dual inside another gives higher derivatives.
    """

    __slots__ = ("re", "du")
    __array_ufunc__ = None  # make ndarray operands defer to the dual's operators

    def __init__(self, re, du=0.0):
        self.re = re
        self.du = du

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.re + o.re, self.du + o.du)
        return Dual(self.re + o, self.du)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.re - o.re, self.du - o.du)
        return Dual(self.re - o, self.du)

    def __rsub__(self, o):
        return Dual(o - self.re, -self.du)

    def __neg__(self):
        return Dual(-self.re, -self.du)

    def __pos__(self):
        return self

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.re * o.re, self.re * o.du + self.du * o.re)
        return Dual(self.re * o, self.du * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            return Dual(self.re / o.re, (self.du * o.re - self.re * o.du) / (o.re * o.re))
        return Dual(self.re / o, self.du / o)

    def __rtruediv__(self, o):
        return Dual(o / self.re, -o * self.du / (self.re * self.re))

    def __pow__(self, o):
        if isinstance(o, Dual):
            return exp(o * log(self))
        if o == 0:
            return Dual(self.re ** 0, 0.0 * self.du)
        return Dual(self.re ** o, o * self.re ** (o - 1) * self.du)

    def __rpow__(self, o):
        return exp(self * math.log(o))


def _lift(name: str, f: Callable, df: Callable) -> Callable:
    def fn(x):
        if isinstance(x, Dual):
            return Dual(fn(x.re), df(x.re) * x.du)
        return f(x)

    fn.__name__ = name
    return fn


sin = _lift("sin", np.sin, lambda x: cos(x))
cos = _lift("cos", np.cos, lambda x: -sin(x))
exp = _lift("exp", np.exp, lambda x: exp(x))
log = _lift("log", np.log, lambda x: 1.0 / x)
sqrt = _lift("sqrt", np.sqrt, lambda x: 0.5 / sqrt(x))
tan = _lift("tan", np.tan, lambda x: 1.0 / cos(x) ** 2)
tanh = _lift("tanh", np.tanh, lambda x: 1.0 - tanh(x) ** 2)
sinh = _lift("sinh", np.sinh, lambda x: cosh(x))
cosh = _lift("cosh", np.cosh, lambda x: sinh(x))
atan = _lift("atan", np.arctan, lambda x: 1.0 / (1.0 + x * x))

FUNCTIONS = {f.__name__: f for f in (sin, cos, exp, log, sqrt, tan, tanh, sinh, cosh, atan)}
CONSTANTS = {"pi": math.pi, "e": math.e}

_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
            ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def compile_expression(text: str, variables: tuple[str, ...]) -> Callable[..., object]:
    """Validate ``text`` and return a function of the named variables."""
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ExpressionError(f"disallowed syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ExpressionError(f"only numeric literals are allowed in {text!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
                raise ExpressionError(f"unknown function call in {text!r}")
        if isinstance(node, ast.Name) and node.id not in FUNCTIONS:
            if node.id not in variables and node.id not in CONSTANTS:
                raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
    code = compile(tree, "<expression>", "eval")
    env = {"__builtins__": {}, **FUNCTIONS, **CONSTANTS}

    def fn(*args):
        return eval(code, env, dict(zip(variables, args)))

    return fn


def _re(v, depth: int):
    for _ in range(depth):
        v = v.re if isinstance(v, Dual) else v
    return v


def _du_chain(v, path: str):
    """Follow ``r``/``d`` accessors through nested duals; constants have zero parts."""
    for step in path:
        if not isinstance(v, Dual):
            return 0.0 if step == "d" else v
        v = v.re if step == "r" else v.du
    return v


def _broadcast(v, m: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(v, float), (m,)).astype(float)


def _state_fns(expr: Callable, n: int):
    def value(X):
        X = np.asarray(X, float)
        return _broadcast(expr(*X.T), X.shape[0])

    def grad(X):
        X = np.asarray(X, float)
        m = X.shape[0]
        out = np.empty((m, n))
        for j in range(n):
            args = [Dual(X[:, k], 1.0 if k == j else 0.0) for k in range(n)]
            out[:, j] = _broadcast(_du_chain(expr(*args), "d"), m)
        return out

    def hess(X):
        X = np.asarray(X, float)
        m = X.shape[0]
        out = np.empty((m, n, n))
        for j in range(n):
            for k in range(j, n):
                args = [Dual(Dual(X[:, i], float(i == j)), Dual(float(i == k), 0.0)) for i in range(n)]
                out[:, j, k] = out[:, k, j] = _broadcast(_du_chain(expr(*args), "dd"), m)
        return out

    return value, grad, hess


def _univariate_derivative(expr: Callable, order: int):
    def d(U):
        U = np.asarray(U, float)
        arg = U
        for _ in range(order):
            arg = Dual(arg, 1.0)
        return _broadcast(_du_chain(expr(arg), "d" * order), U.size).reshape(U.shape)

    return d


def _dynamics_fns(exprs: list[Callable], n: int):
    def value(X, U):
        X, U = np.asarray(X, float), np.asarray(U, float)
        m = X.shape[0]
        return np.stack([_broadcast(e(*X.T, U), m) for e in exprs], axis=-1)

    def jac_x(X, U):
        X, U = np.asarray(X, float), np.asarray(U, float)
        m = X.shape[0]
        out = np.empty((m, n, n))
        for j in range(n):
            args = [Dual(X[:, k], 1.0 if k == j else 0.0) for k in range(n)]
            for i, e in enumerate(exprs):
                out[:, i, j] = _broadcast(_du_chain(e(*args, U), "d"), m)
        return out

    def jac_u(X, U):
        X, U = np.asarray(X, float), np.asarray(U, float)
        m = X.shape[0]
        return np.stack([_broadcast(_du_chain(e(*X.T, Dual(U, 1.0)), "d"), m) for e in exprs],
                        axis=-1)

    return value, jac_x, jac_u


def _bound(value, name: str):
    if value is None or isinstance(value, (int, float)):
        return value
    fn = compile_expression(value, ("t",))
    return lambda t: np.broadcast_to(np.asarray(fn(t), float), np.shape(t))


def problem_from_dict(data: dict) -> NlpProblem:
    """Build an :class:`NlpProblem` from a parsed problem-file mapping."""
    try:
        x0 = [float(v) for v in data["x0"]]
        n = len(x0)
        xs = tuple(f"x{i + 1}" for i in range(n))
        f = compile_expression(data["f"], xs)
        g = compile_expression(data["g"], ("u",))
        h_src = data["h"]
        t0, tf = float(data.get("t0", 0.0)), float(data["tf"])
    except KeyError as exc:
        raise ExpressionError(f"problem file is missing key {exc.args[0]!r}") from None
    if len(h_src) != n:
        raise ExpressionError(f"h has {len(h_src)} components but x0 has {n}")
    hs = [compile_expression(s, xs + ("u",)) for s in h_src]
    fv, fg, fh = _state_fns(f, n)
    hv, hx, hu = _dynamics_fns(hs, n)
    return NlpProblem(
        state_dim=n, t0=t0, tf=tf,
        f_eval=fv, f_grad=fg, f_hess=fh,
        g_eval=_univariate_derivative(g, 0), g_d1=_univariate_derivative(g, 1),
        g_d2=_univariate_derivative(g, 2), g_d3=_univariate_derivative(g, 3),
        h_eval=hv, h_jac_x=hx, h_jac_u=hu,
        x0=np.array(x0), E=data.get("E"), e_f=data.get("e_f"),
        alpha=_bound(data.get("alpha"), "alpha"), beta=_bound(data.get("beta"), "beta"),
        name=str(data.get("name", "custom")),
    )


def load_problem(path) -> NlpProblem:
    """Read a JSON problem file (format in the module docstring)."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ExpressionError(f"invalid JSON in {path}: {exc}") from None
    return problem_from_dict(data)
