"""Small arithmetic-expression interpreter for user-supplied vector fields.

Expressions are parsed once with :mod:`ast` and compiled into closures over
numpy arrays, so a single compiled field evaluates a whole batch of states.
Only arithmetic, a fixed set of elementary functions, numeric literals and
named variables/parameters are accepted.
"""

from __future__ import annotations

import ast
import math
from typing import Callable, Mapping, Sequence

import numpy as np

_FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "arctan": np.arctan,
    "arctan2": np.arctan2,
    "floor": np.floor,
}

_CONSTANTS = {"pi": math.pi, "e": math.e}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
    ast.Mod: np.mod,
}


class ExpressionError(ValueError):
    """Raised for expressions outside the supported grammar."""


def _compile(node: ast.AST, names: frozenset[str]) -> Callable[[Mapping], object]:
    if isinstance(node, ast.Expression):
        return _compile(node.body, names)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r}")
        value = float(node.value)
        return lambda env: value
    if isinstance(node, ast.Name):
        name = node.id
        if name in names:
            return lambda env: env[name]
        if name in _CONSTANTS:
            value = _CONSTANTS[name]
            return lambda env: value
        raise ExpressionError(f"unknown name {name!r}")
    if isinstance(node, ast.UnaryOp):
        operand = _compile(node.operand, names)
        if isinstance(node.op, ast.USub):
            return lambda env: np.negative(operand(env))
        if isinstance(node.op, ast.UAdd):
            return operand
        raise ExpressionError("unsupported unary operator")
    if isinstance(node, ast.BinOp):
        op = _BINOPS.get(type(node.op))
        if op is None:
            raise ExpressionError(f"unsupported operator {type(node.op).__name__}")
        left = _compile(node.left, names)
        right = _compile(node.right, names)
        return lambda env: op(left(env), right(env))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ExpressionError("only elementary functions may be called")
        if node.keywords:
            raise ExpressionError("keyword arguments are not supported")
        func = _FUNCTIONS[node.func.id]
        args = [_compile(a, names) for a in node.args]
        return lambda env: func(*(a(env) for a in args))
    raise ExpressionError(f"unsupported syntax: {type(node).__name__}")


def compile_expression(source: str, names: Sequence[str]) -> Callable[[Mapping], object]:
    """Compile ``source`` into a callable taking a name -> value mapping."""
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
    return _compile(tree, frozenset(names))


def compile_field(
    expressions: Sequence[str],
    variables: Sequence[str],
    params: Mapping[str, float] | None = None,
) -> Callable[[np.ndarray, np.ndarray | float], np.ndarray]:
    """Build a vectorized ``rhs(x, t)`` from per-axis expression strings.

    ``x`` has shape ``(n, D)``; ``t`` is a scalar or shape ``(n,)``.
    """
    params = dict(params or {})
    if len(expressions) != len(variables):
        raise ExpressionError(
            f"{len(expressions)} expressions for {len(variables)} state variables"
        )
    clash = set(variables) & (set(params) | {"t"})
    if clash:
        raise ExpressionError(f"names used twice: {sorted(clash)}")
    names = [*variables, "t", *params]
    compiled = [compile_expression(e, names) for e in expressions]

    def rhs(x: np.ndarray, t) -> np.ndarray:
        env = dict(params)
        env["t"] = t
        for i, v in enumerate(variables):
            env[v] = x[..., i]
        out = np.empty(x.shape, dtype=float)
        for i, f in enumerate(compiled):
            out[..., i] = f(env)
        return out

    return rhs
