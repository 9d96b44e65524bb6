"""Small whitelisted expression language for claims, asset generators and payoffs.

Two evaluation modes share one parser:

* ``exact`` -- numeric literals become ``Fraction`` so that tree claims stay
  rational (``"max(QV - 1, 0)"``, ``"B**2"``);
* ``float`` -- numpy semantics for grid payoffs (``"max(x - 1, 0)"`` maps to
  ``numpy.maximum``).
"""

from __future__ import annotations

import ast
import math
from fractions import Fraction
from typing import Any, Callable, Mapping

import numpy as np

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.FloorDiv)
_UNARY = (ast.UAdd, ast.USub)
_CMP = (ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq)


class ExpressionError(ValueError):
    pass


def _exact_max(*args):
    return max(args)


def _exact_min(*args):
    return min(args)


EXACT_FUNCS: dict[str, Callable] = {
    "max": _exact_max,
    "min": _exact_min,
    "abs": abs,
}

FLOAT_FUNCS: dict[str, Callable] = {
    "max": np.maximum,
    "min": np.minimum,
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "where": np.where,
}


def _check(node: ast.AST, names: set[str], funcs: Mapping[str, Callable]) -> None:
    for sub in ast.walk(node):
        if isinstance(sub, (ast.Expression, ast.Load)):
            continue
        if isinstance(sub, ast.BinOp):
            if not isinstance(sub.op, _BINOPS):
                raise ExpressionError(f"operator {type(sub.op).__name__} not allowed")
        elif isinstance(sub, ast.UnaryOp):
            if not isinstance(sub.op, _UNARY):
                raise ExpressionError(f"operator {type(sub.op).__name__} not allowed")
        elif isinstance(sub, ast.Compare):
            if not all(isinstance(o, _CMP) for o in sub.ops):
                raise ExpressionError("comparison not allowed")
        elif isinstance(sub, ast.Call):
            if not isinstance(sub.func, ast.Name) or sub.func.id not in funcs:
                raise ExpressionError(f"call to {ast.dump(sub.func)} not allowed")
            if sub.keywords:
                raise ExpressionError("keyword arguments not allowed")
        elif isinstance(sub, ast.Name):
            if sub.id not in names and sub.id not in funcs and sub.id not in ("pi", "e"):
                raise ExpressionError(f"unknown name {sub.id!r}")
        elif isinstance(sub, ast.Constant):
            if not isinstance(sub.value, (int, float)) or isinstance(sub.value, bool):
                raise ExpressionError(f"literal {sub.value!r} not allowed")
        elif isinstance(sub, (ast.operator, ast.unaryop, ast.cmpop)):
            continue
        else:
            raise ExpressionError(f"syntax {type(sub).__name__} not allowed")


class _ToFraction(ast.NodeTransformer):
    def visit_Constant(self, node: ast.Constant) -> ast.AST:
        if isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            call = ast.Call(
                func=ast.Name(id="__F", ctx=ast.Load()),
                args=[ast.Constant(value=repr(node.value))],
                keywords=[],
            )
            return ast.copy_location(call, node)
        return node


class Expression:
    """A parsed expression in fixed variables, callable with keyword values."""

    def __init__(self, source: str, variables: tuple[str, ...], mode: str = "exact"):
        if mode not in ("exact", "float"):
            raise ValueError(f"unknown mode {mode!r}")
        self.source = source
        self.variables = variables
        self.mode = mode
        funcs = EXACT_FUNCS if mode == "exact" else FLOAT_FUNCS
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        _check(tree, set(variables), funcs)
        if mode == "exact":
            tree = ast.fix_missing_locations(_ToFraction().visit(tree))
        self._code = compile(tree, "<expr>", "eval")
        self._env: dict[str, Any] = {"__builtins__": {}, **funcs}
        if mode == "exact":
            self._env["__F"] = Fraction
        else:
            self._env.update(pi=math.pi, e=math.e)

    def __call__(self, **values):
        missing = [v for v in self.variables if v not in values]
        if missing:
            raise ExpressionError(f"missing variables {missing} for {self.source!r}")
        env = dict(self._env)
        env.update(values)
        out = eval(self._code, env)  # noqa: S307 - AST checked above
        if self.mode == "exact" and isinstance(out, bool):
            out = Fraction(int(out))
        if self.mode == "exact" and isinstance(out, float):
            raise ExpressionError(f"{self.source!r} left exact arithmetic")
        return out

    def __repr__(self) -> str:
        return f"Expression({self.source!r}, mode={self.mode!r})"


def exact(source: str, variables: tuple[str, ...]) -> Expression:
    return Expression(source, variables, "exact")


def grid_function(spec, variables: tuple[str, ...] = ("t", "x")) -> Callable:
    """Turn a float expression string, number or callable into a vectorised function."""
    if callable(spec):
        return spec
    if isinstance(spec, (int, float)):
        c = float(spec)

        def const(*args):
            shape = np.broadcast(*[np.asarray(a) for a in args]).shape if args else ()
            return np.full(shape, c)

        return const
    expr = Expression(str(spec), variables, "float")

    def f(*args):
        vals = dict(zip(variables, args))
        out = expr(**vals)
        shape = np.broadcast(*[np.asarray(a) for a in args]).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    f.source = expr.source  # type: ignore[attr-defined]
    return f
