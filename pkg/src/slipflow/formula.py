"""Closed-form scalar profiles parsed from a small expression grammar.

Accepted syntax: numeric literals, the variable ``x``, ``+ - * /``, ``**``
or ``^`` for powers, ``pow(a, b)``, ``sin``, ``cos``, ``exp``, ``tanh``
and ``smoothstep(x, center, width) = (1 + tanh((x - center)/width))/2``.
Derivatives are symbolic; evaluation goes through numpy lambdas.
"""

from __future__ import annotations

import functools
import re

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

from .errors import FormulaError

X = sp.Symbol("x", real=True)


def _smoothstep(arg, center, width):
    return (1 + sp.tanh((arg - center) / width)) / 2


def _pow(a, b):
    return sp.Pow(a, b)


_ALLOWED = {
    "x": X,
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "tanh": sp.tanh,
    "pow": _pow,
    "smoothstep": _smoothstep,
    "pi": sp.pi,
}
_ALLOWED_FUNCS = (sp.sin, sp.cos, sp.exp, sp.tanh)
_TRANSFORMS = standard_transformations + (convert_xor,)
_IDENT = re.compile(r"(?<![0-9.])[A-Za-z_][A-Za-z_0-9]*")


def _check_tree(expr):
    for node in sp.preorder_traversal(expr):
        if isinstance(node, sp.Symbol) and node != X:
            raise FormulaError(f"unknown name {node}")
        if isinstance(node, sp.Function) and not isinstance(node, _ALLOWED_FUNCS):
            raise FormulaError(f"function {node.func} is not allowed")


class Formula:
    """A scalar function of one variable with exact first/second derivatives."""

    def __init__(self, source):
        if isinstance(source, Formula):
            source = source.text
        if isinstance(source, (int, float)):
            source = repr(float(source))
        if not isinstance(source, str):
            raise FormulaError(f"expected expression string, got {type(source).__name__}")
        self.text = source
        for name in _IDENT.findall(source):
            if name not in _ALLOWED:
                raise FormulaError(f"unknown name {name}")
        try:
            expr = parse_expr(source, local_dict=dict(_ALLOWED), global_dict={
                "Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational,
                "Symbol": sp.Symbol,
            }, transformations=_TRANSFORMS, evaluate=True)
        except FormulaError:
            raise
        except Exception as exc:  # sympy raises a zoo of types here
            raise FormulaError(f"cannot parse {source!r}: {exc}") from exc
        if not isinstance(expr, sp.Expr):
            raise FormulaError(f"{source!r} is not a scalar expression")
        _check_tree(expr)
        # rationalize floats so asymptotics are exact
        self.sym = sp.nsimplify(expr, rational=True)
        self._d1 = sp.diff(self.sym, X)
        self._d2 = sp.diff(self._d1, X)
        self._f0 = _lambdify(self.sym)
        self._f1 = _lambdify(self._d1)
        self._f2 = _lambdify(self._d2)

    def __repr__(self):
        return f"Formula({self.text!r})"

    def __call__(self, x):
        return self._f0(x)

    def value(self, x):
        return self._f0(x)

    def d1(self, x):
        return self._f1(x)

    def d2(self, x):
        return self._f2(x)

    @property
    def is_constant(self):
        return X not in self.sym.free_symbols

    def combine(self, other, op):
        """Return a new formula ``self op other`` (op one of + - * /)."""
        return Formula(f"({self.text}) {op} ({other.text})")

    @functools.lru_cache(maxsize=4)
    def leading_power(self, side=1):
        """Exponent p with |f| ~ |x|^p as x -> side*inf, or None if undecidable."""
        expr = self.sym if side > 0 else self.sym.subs(X, -X)
        if X not in expr.free_symbols:
            return 0.0
        try:
            p = sp.limit(sp.log(sp.Abs(expr)) / sp.log(X), X, sp.oo)
        except Exception:
            return None
        if p.is_real and p.is_finite:
            return float(p)
        return None


def _lambdify(expr):
    fn = sp.lambdify(X, expr, modules="numpy")

    def wrapped(x):
        x = np.asarray(x, dtype=float)
        out = fn(x)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy() if x.ndim else float(out)

    return wrapped
