"""Explicit Runge-Kutta and additive-noise stochastic Runge-Kutta tableaux.

Coefficients are kept as :class:`fractions.Fraction` so that equality between
tableaux is exact; float views are produced on demand.

A stochastic tableau follows the additive-noise form

.. code-block:: text

    Z_i = y + h * sum_j a_ij f(t + c_j h, Z_j) + aW_i W + aH_i H
    y'  = y + h * sum_i b_i f(t + c_i h, Z_i) + bW W + bH H

where ``W`` is the Brownian increment and ``H`` the space-time Levy area.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "BUILTIN_NAMES",
    "ButcherTableau",
    "ExtendedButcherTableau",
    "ODE_BUILTINS",
    "SDE_BUILTINS",
    "builtin",
    "format_tableau",
    "generic2",
    "load_tableau",
    "parse_tableau",
    "stability_polynomial",
    "transfer_function",
    "validate",
]

Number = Union[int, float, str, Fraction]


def _frac(x: Number) -> Fraction:
    """Exact rational for ``x``; floats snap to a small-denominator fraction only
    when that fraction round-trips to the identical float."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        exact = Fraction(x)
        small = exact.limit_denominator(1_000_000)
        return small if float(small) == x else exact
    return Fraction(x)


def _vec(xs: Sequence[Number]) -> tuple[Fraction, ...]:
    return tuple(_frac(x) for x in xs)


@dataclass(frozen=True)
class ButcherTableau:
    """Explicit RK coefficients ``(c, a, b)`` with an optional embedded ``b``."""

    name: str
    c: tuple[Fraction, ...]
    a: tuple[tuple[Fraction, ...], ...]
    b: tuple[Fraction, ...]
    b_embedded: tuple[Fraction, ...] | None = None

    @classmethod
    def create(
        cls,
        name: str,
        c: Sequence[Number],
        a: Sequence[Sequence[Number]],
        b: Sequence[Number],
        b_embedded: Sequence[Number] | None = None,
    ) -> "ButcherTableau":
        return cls(
            name,
            _vec(c),
            tuple(_vec(row) for row in a),
            _vec(b),
            None if b_embedded is None else _vec(b_embedded),
        )

    @property
    def stages(self) -> int:
        return len(self.b)

    @property
    def is_stochastic(self) -> bool:
        return False

    @cached_property
    def c_float(self) -> NDArray[np.float64]:
        return np.array([float(x) for x in self.c])

    @cached_property
    def a_float(self) -> NDArray[np.float64]:
        return np.array([[float(x) for x in row] for row in self.a]).reshape(self.stages, self.stages)

    @cached_property
    def b_float(self) -> NDArray[np.float64]:
        return np.array([float(x) for x in self.b])

    def coefficients_equal(self, other: "ButcherTableau") -> bool:
        """Exact coefficient-wise equality, ignoring the name."""
        return _coefficient_key(self) == _coefficient_key(other)


@dataclass(frozen=True)
class ExtendedButcherTableau(ButcherTableau):
    """Additive-noise SRK tableau: adds per-stage ``aW``/``aH`` and output ``bW``/``bH``."""

    aW: tuple[Fraction, ...] = ()
    aH: tuple[Fraction, ...] = ()
    bW: Fraction = Fraction(1)
    bH: Fraction = Fraction(0)

    @classmethod
    def create_stochastic(
        cls,
        name: str,
        c: Sequence[Number],
        a: Sequence[Sequence[Number]],
        b: Sequence[Number],
        aW: Sequence[Number],
        aH: Sequence[Number],
        bW: Number,
        bH: Number,
        b_embedded: Sequence[Number] | None = None,
    ) -> "ExtendedButcherTableau":
        return cls(
            name,
            _vec(c),
            tuple(_vec(row) for row in a),
            _vec(b),
            None if b_embedded is None else _vec(b_embedded),
            _vec(aW),
            _vec(aH),
            _frac(bW),
            _frac(bH),
        )

    @property
    def is_stochastic(self) -> bool:
        return True

    @cached_property
    def aW_float(self) -> NDArray[np.float64]:
        return np.array([float(x) for x in self.aW])

    @cached_property
    def aH_float(self) -> NDArray[np.float64]:
        return np.array([float(x) for x in self.aH])


def _coefficient_key(t: ButcherTableau) -> tuple:
    key: tuple = (t.c, t.a, t.b, t.b_embedded)
    if isinstance(t, ExtendedButcherTableau):
        key += (t.aW, t.aH, t.bW, t.bH)
    return key


# ---------------------------------------------------------------------- builtins
def generic2(eta: Number, name: str | None = None) -> ButcherTableau:
    """Two-stage second-order family with ``c2 = a21 = eta`` and
    ``b = (1 - 1/(2 eta), 1/(2 eta))``."""
    e = _frac(eta)
    if e == 0:
        raise ValueError("generic2 requires eta != 0")
    w2 = 1 / (2 * e)
    return ButcherTableau(
        name or f"generic2({e})",
        (Fraction(0), e),
        ((Fraction(0), Fraction(0)), (e, Fraction(0))),
        (1 - w2, w2),
    )


def _euler() -> ButcherTableau:
    return ButcherTableau.create("euler", [0], [[0]], [1])


def _midpoint() -> ButcherTableau:
    return ButcherTableau.create("midpoint", [0, Fraction(1, 2)], [[0, 0], [Fraction(1, 2), 0]], [0, 1])


def _rk4() -> ButcherTableau:
    h = Fraction(1, 2)
    return ButcherTableau.create(
        "rk4",
        [0, h, h, 1],
        [[0, 0, 0, 0], [h, 0, 0, 0], [0, h, 0, 0], [0, 0, 1, 0]],
        [Fraction(1, 6), Fraction(1, 3), Fraction(1, 3), Fraction(1, 6)],
    )


def _midpoint_embedded_euler() -> ButcherTableau:
    return ButcherTableau.create(
        "midpoint_embedded_euler",
        [0, Fraction(1, 2)],
        [[0, 0], [Fraction(1, 2), 0]],
        [0, 1],
        b_embedded=[1, 0],
    )


def _euler_maruyama() -> ExtendedButcherTableau:
    return ExtendedButcherTableau.create_stochastic(
        "euler_maruyama", [0], [[0]], [1], aW=[0], aH=[0], bW=1, bH=0
    )


def _shark() -> ExtendedButcherTableau:
    five_sixths = Fraction(5, 6)
    return ExtendedButcherTableau.create_stochastic(
        "shark",
        [0, five_sixths],
        [[0, 0], [five_sixths, 0]],
        [Fraction(2, 5), Fraction(3, 5)],
        aW=[0, five_sixths],
        aH=[1, 1],
        bW=1,
        bH=0,
        b_embedded=[Fraction(-3, 5), Fraction(3, 5)],
    )


_BUILDERS = {
    "euler": _euler,
    "midpoint": _midpoint,
    "ralston2": lambda: generic2(Fraction(2, 3), "ralston2"),
    "heun2": lambda: generic2(1, "heun2"),
    "rk4": _rk4,
    "midpoint_embedded_euler": _midpoint_embedded_euler,
    "euler_maruyama": _euler_maruyama,
    "shark": _shark,
}

BUILTIN_NAMES: tuple[str, ...] = tuple(_BUILDERS)
ODE_BUILTINS: tuple[str, ...] = ("euler", "midpoint", "ralston2", "heun2", "rk4", "midpoint_embedded_euler")
SDE_BUILTINS: tuple[str, ...] = ("euler_maruyama", "shark")

_GENERIC_RE = re.compile(r"^generic2\((?P<eta>[^)]+)\)$")


def builtin(name: str, eta: Number | None = None) -> ButcherTableau:
    """Look up a builtin tableau.

    ``generic2`` takes ``eta`` either as keyword or inline, e.g.
    ``builtin("generic2(2/3)")``.
    """
    key = name.strip()
    match = _GENERIC_RE.match(key)
    if match:
        return generic2(_frac(match.group("eta").strip()))
    if key == "generic2":
        if eta is None:
            raise ValueError("generic2 needs eta")
        return generic2(eta)
    try:
        return _BUILDERS[key]()
    except KeyError:
        raise KeyError(f"unknown tableau {name!r}; choose from {', '.join(BUILTIN_NAMES)} or generic2(eta)") from None


# ---------------------------------------------------------------------- checks
def validate(tableau: ButcherTableau) -> list[str]:
    """Return every violated structural condition (empty list means valid)."""
    problems: list[str] = []
    s = tableau.stages
    if len(tableau.c) != s:
        problems.append(f"c has {len(tableau.c)} entries for {s} stages")
    if len(tableau.a) != s or any(len(row) != s for row in tableau.a):
        problems.append(f"a must be {s}x{s}")
        return problems
    for i, row in enumerate(tableau.a):
        for j in range(i, s):
            if row[j] != 0:
                problems.append(f"explicitness: a[{i + 1}][{j + 1}] = {row[j]} is nonzero")
    for i, row in enumerate(tableau.a):
        if i < len(tableau.c) and sum(row, Fraction(0)) != tableau.c[i]:
            problems.append(f"row sum: sum_j a[{i + 1}][j] = {sum(row, Fraction(0))} but c[{i + 1}] = {tableau.c[i]}")
    total = sum(tableau.b, Fraction(0))
    if total != 1:
        problems.append(f"consistency: sum(b) = {total}, expected 1")
    if tableau.b_embedded is not None and len(tableau.b_embedded) != s:
        problems.append(f"b_embedded has {len(tableau.b_embedded)} entries for {s} stages")
    if isinstance(tableau, ExtendedButcherTableau):
        if len(tableau.aW) != s or len(tableau.aH) != s:
            problems.append("aW and aH need one entry per stage")
    return problems


# ---------------------------------------------------------------------- stability
def stability_polynomial(tableau: ButcherTableau) -> tuple[Fraction, ...]:
    """Coefficients ``(r_0, r_1, ...)`` of ``R(z) = 1 + z b^T (I - zA)^{-1} 1``.

    For an explicit tableau ``A`` is nilpotent, so ``R`` is the polynomial
    ``1 + sum_k z^k b^T A^{k-1} 1`` of degree at most ``s``.
    """
    if any(p.startswith("explicitness") for p in validate(tableau)):
        raise ValueError("stability polynomial needs an explicit tableau")
    s = tableau.stages
    coeffs = [Fraction(1)]
    vec = [Fraction(1)] * s
    for _ in range(s):
        coeffs.append(sum((bi * vi for bi, vi in zip(tableau.b, vec)), Fraction(0)))
        vec = [sum((tableau.a[i][j] * vec[j] for j in range(s)), Fraction(0)) for i in range(s)]
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    return tuple(coeffs)


def transfer_function(tableau: ButcherTableau):
    """Vectorised evaluator ``z -> R(z)`` for complex or real ``z``."""
    coeffs = [float(c) for c in stability_polynomial(tableau)]

    def evaluate(z):
        return np.polynomial.polynomial.polyval(z, coeffs)

    return evaluate


# ---------------------------------------------------------------------- text format
def parse_tableau(text: str, name: str = "custom") -> ButcherTableau:
    """Parse the plain-text coefficient format.

    Stage rows read ``c_i | a_i1 ... a_is [| aW_i aH_i]``.  Rows with an empty
    ``c`` field give the weights: the first is ``b [| bW bH]``, an optional
    second is ``b_embedded``.  ``#`` starts a comment; entries are integers,
    decimals or fractions such as ``5/6``.
    """
    stage_rows: list[list[str]] = []
    weight_rows: list[list[str]] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split("|")]
        (weight_rows if parts[0] == "" else stage_rows).append(parts)
    if not stage_rows or not weight_rows:
        raise ValueError("tableau text needs stage rows and a weight row")

    def nums(field: str) -> list[Fraction]:
        return [Fraction(tok) for tok in field.split()]

    c = [nums(r[0])[0] for r in stage_rows]
    a = [nums(r[1]) for r in stage_rows]
    b = nums(weight_rows[0][1])
    b_emb = nums(weight_rows[1][1]) if len(weight_rows) > 1 else None
    extended = [len(r) > 2 for r in stage_rows]
    if any(extended) != all(extended):
        raise ValueError("either every stage row has W/H columns or none does")
    if all(extended):
        aW, aH = zip(*(nums(r[2]) for r in stage_rows))
        if len(weight_rows[0]) < 3:
            raise ValueError("stochastic tableau needs bW bH on the weight row")
        bW, bH = nums(weight_rows[0][2])
        return ExtendedButcherTableau.create_stochastic(name, c, a, b, list(aW), list(aH), bW, bH, b_emb)
    return ButcherTableau.create(name, c, a, b, b_emb)


def load_tableau(path: str | Path) -> ButcherTableau:
    p = Path(path)
    return parse_tableau(p.read_text(), name=p.stem)


def format_tableau(tableau: ButcherTableau) -> str:
    """Inverse of :func:`parse_tableau`."""
    lines = []
    ext = isinstance(tableau, ExtendedButcherTableau)
    for i in range(tableau.stages):
        row = f"{tableau.c[i]} | " + " ".join(str(x) for x in tableau.a[i])
        if ext:
            row += f" | {tableau.aW[i]} {tableau.aH[i]}"
        lines.append(row)
    w = "| " + " ".join(str(x) for x in tableau.b)
    if ext:
        w += f" | {tableau.bW} {tableau.bH}"
    lines.append(w)
    if tableau.b_embedded is not None:
        lines.append("| " + " ".join(str(x) for x in tableau.b_embedded))
    return "\n".join(lines) + "\n"
