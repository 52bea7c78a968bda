"""Wick ordering of one-variable polynomials.

A :class:`WickPolynomial` with coefficients (c_0, ..., c_d) and constant c stands
for sum_k c_k :phi^k:_c, where :phi^k:_c is generated by

    :e^{alpha phi}:_c = e^{alpha phi} e^{-alpha^2 c / 2}.

With c = 0 it is an ordinary polynomial. Coefficients are kept as ``Fraction``
in exact mode and as floats otherwise.

CLI grammar for polynomials (whitespace ignored)::

    poly  := term (("+" | "-") term)*
    term  := coef ["*" "x" ["^" int]] | "x" ["^" int]
    coef  := decimal or fraction literal, e.g. 0.5, 1e-2, 3/4
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np


def _num(v, exact: bool):
    if exact:
        return v if isinstance(v, Fraction) else Fraction(v)
    return float(v)


@dataclass(frozen=True)
class WickPolynomial:
    coeffs: tuple
    wick_constant: object = 0
    exact: bool = True

    def __post_init__(self):
        cs = [_num(c, self.exact) for c in self.coeffs]
        while len(cs) > 1 and cs[-1] == 0:
            cs.pop()
        object.__setattr__(self, "coeffs", tuple(cs) if cs else (_num(0, self.exact),))
        object.__setattr__(self, "wick_constant", _num(self.wick_constant, self.exact))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1 if any(c != 0 for c in self.coeffs) else 0

    def monomial_coeffs(self) -> tuple:
        """Expand into the ordinary monomial basis."""
        out = [_num(0, self.exact)] * len(self.coeffs)
        for k, ck in enumerate(self.coeffs):
            if ck == 0:
                continue
            for i, v in enumerate(wick_order(k, self.wick_constant, self.exact).coeffs):
                out[i] += ck * v
        return tuple(out)

    def reorder(self, c_to) -> "WickPolynomial":
        return wick_reorder(self, self.wick_constant, c_to)

    def is_bounded_below(self) -> bool:
        d = self.degree
        return d == 0 or (d % 2 == 0 and self.coeffs[d] > 0)

    def __call__(self, phi):
        """Evaluate sum_k c_k :phi^k:_c via the Hermite recursion."""
        phi = np.asarray(phi, dtype=float)
        c = float(self.wick_constant)
        h_prev = np.ones_like(phi)
        total = float(self.coeffs[0]) * h_prev
        if len(self.coeffs) == 1:
            return total
        h = phi.copy()
        total = total + float(self.coeffs[1]) * h
        for k in range(1, len(self.coeffs) - 1):
            h, h_prev = phi * h - k * c * h_prev, h
            ck = float(self.coeffs[k + 1])
            if ck:
                total = total + ck * h
        return total

    def to_float(self) -> "WickPolynomial":
        return WickPolynomial(tuple(float(c) for c in self.coeffs),
                              float(self.wick_constant), exact=False)

    def scaled(self, s) -> "WickPolynomial":
        return WickPolynomial(tuple(c * _num(s, self.exact) for c in self.coeffs),
                              self.wick_constant, self.exact)

    def __str__(self):
        terms = [f"{c}*x^{k}" for k, c in enumerate(self.coeffs) if c != 0]
        body = " + ".join(terms) or "0"
        return f":{body}:_{self.wick_constant}" if self.wick_constant else body


def wick_order(n: int, c, exact: bool = True) -> WickPolynomial:
    """:phi^n:_c = sum_{m <= n/2} n!/(m! (n-2m)!) phi^{n-2m} (-c/2)^m, as a plain polynomial."""
    if n < 0:
        raise ValueError("n must be >= 0")
    c = _num(c, exact)
    coeffs = [_num(0, exact)] * (n + 1)
    for m in range(n // 2 + 1):
        comb = math.factorial(n) // (math.factorial(m) * math.factorial(n - 2 * m))
        coeffs[n - 2 * m] = comb * (-c / 2) ** m
    return WickPolynomial(tuple(coeffs), 0, exact)


def wick_reorder(P: WickPolynomial, c_from, c_to) -> WickPolynomial:
    """Re-express sum_k c_k :phi^k:_{c_from} as a polynomial Wick ordered against c_to.

    Uses :phi^n:_{c1} = sum_m n!/(m! (n-2m)!) ((c2 - c1)/2)^m :phi^{n-2m}:_{c2}.
    """
    ex = P.exact
    c_from, c_to = _num(c_from, ex), _num(c_to, ex)
    if P.wick_constant != c_from:
        raise ValueError("polynomial is not ordered against c_from")
    d = (c_to - c_from) / 2
    out = [_num(0, ex)] * len(P.coeffs)
    for n, cn in enumerate(P.coeffs):
        if cn == 0:
            continue
        for m in range(n // 2 + 1):
            comb = math.factorial(n) // (math.factorial(m) * math.factorial(n - 2 * m))
            out[n - 2 * m] += cn * comb * d**m
    return WickPolynomial(tuple(out), c_to, ex)


def wick_pairing(n: int, m: int, cov_fg: float) -> float:
    """E[:phi(f)^n: :phi(g)^m:] under the Gaussian measure = delta_nm n! C(f,g)^n."""
    if n < 0 or m < 0:
        raise ValueError("orders must be >= 0")
    return float(math.factorial(n) * cov_fg**n) if n == m else 0.0


def exponential_partial_sum(phi, alpha: float, c: float, N: int):
    """sum_{n <= N} alpha^n/n! :phi^n:_c, which tends to e^{alpha phi - alpha^2 c/2}."""
    phi = np.asarray(phi, dtype=float)
    coeffs = [alpha**n / math.factorial(n) for n in range(N + 1)]
    return WickPolynomial(tuple(coeffs), c, exact=False)(phi)


# ---------------------------------------------------------------- parsing

_TERM = re.compile(r"""^(?P<coef>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?(?:/\d+)?|\.\d+(?:[eE][-+]?\d+)?)?
                       (?:(?P<star>\*)?(?P<x>x)(?:\^(?P<pow>\d+))?)?$""", re.X)


def parse_poly(text: str, exact: bool = True) -> tuple:
    """Monomial coefficients (c_0, ..., c_d) of a polynomial string such as '1*x^4+0.5*x^2'."""
    s = re.sub(r"\s+", "", text)
    if not s:
        raise ValueError("empty polynomial")
    pieces = [p for p in re.split(r"(?<![eE])(?=[+-])", s) if p]
    coeffs: dict[int, object] = {}
    for piece in pieces:
        sign = -1 if piece.startswith("-") else 1
        body = piece.lstrip("+-")
        m = _TERM.match(body)
        if not m or not body or (m.group("star") and not m.group("coef")):
            raise ValueError(f"bad term {piece!r} in {text!r}")
        coef = m.group("coef")
        if coef is None:
            value = Fraction(1)
        else:
            value = Fraction(coef) if exact else float(Fraction(coef))
        if m.group("x"):
            power = int(m.group("pow")) if m.group("pow") else 1
        else:
            if coef is None:
                raise ValueError(f"bad term {piece!r}")
            power = 0
        coeffs[power] = coeffs.get(power, 0) + sign * _num(value, exact)
    deg = max(coeffs)
    return tuple(_num(coeffs.get(k, 0), exact) for k in range(deg + 1))


def interaction_polynomial(coeffs: Sequence, c, exact: bool = False) -> WickPolynomial:
    """:P:_c from monomial coefficients of P."""
    return WickPolynomial(tuple(coeffs), c, exact)
