"""Arithmetic in binary extension fields GF(2^m).

Elements are packed integers: bit i holds the coefficient of x^i.  A field
is fixed by its degree and the low part of its reduction polynomial, i.e.
x^4 + x + 1 is ``FieldSpec(4, 0b0011)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

MAX_DEGREE = 8


class FieldError(ValueError):
    """Invalid field definition or mixing of elements from different fields."""


def clmul(a: int, b: int) -> int:
    """Carry-less product of two GF(2) polynomials."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        b >>= 1
    return r


def poly_mod(a: int, mod: int) -> int:
    """Remainder of GF(2) polynomial ``a`` modulo ``mod`` (long division)."""
    dm = mod.bit_length()
    while a.bit_length() >= dm:
        a ^= mod << (a.bit_length() - dm)
    return a


def is_irreducible(poly: int) -> bool:
    """Trial division by every polynomial of degree 1 .. deg(poly) // 2."""
    deg = poly.bit_length() - 1
    if deg < 1:
        return False
    for d in range(1, deg // 2 + 1):
        for div in range(1 << d, 1 << (d + 1)):
            if poly_mod(poly, div) == 0:
                return False
    return True


@dataclass(frozen=True)
class FieldSpec:
    degree: int
    reduction_poly: int

    def __post_init__(self):
        if not 2 <= self.degree <= MAX_DEGREE:
            raise FieldError(f"unsupported degree {self.degree}")
        if not 0 <= self.reduction_poly < (1 << self.degree):
            raise FieldError(
                f"reduction_poly {self.reduction_poly:#x} has bits at or above x^{self.degree}"
            )
        if not is_irreducible(self.modulus):
            raise FieldError(f"x^{self.degree} + {self.reduction_poly:#x} is not irreducible")

    @property
    def modulus(self) -> int:
        return (1 << self.degree) | self.reduction_poly

    @property
    def size(self) -> int:
        return 1 << self.degree

    @property
    def mask(self) -> int:
        return self.size - 1

    def __call__(self, value: int) -> "GFElement":
        return GFElement(value, self)

    def elements(self) -> list["GFElement"]:
        return [GFElement(v, self) for v in range(self.size)]

    def mul(self, a: int, b: int) -> int:
        """Shift-and-add multiply with reduction at each step."""
        r = 0
        top = 1 << self.degree
        for _ in range(self.degree):
            if b & 1:
                r ^= a
            b >>= 1
            a <<= 1
            if a & top:
                a ^= self.modulus
        return r

    def inv(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("zero has no inverse")
        return int(inverse_table(self)[a])

    def poly_str(self) -> str:
        return poly_to_str(self.modulus, var="X")

    def __repr__(self):
        return f"GF(2^{self.degree})/{self.poly_str()}"


@lru_cache(maxsize=None)
def mul_table(field: FieldSpec) -> np.ndarray:
    """Full multiplication table, ``table[a, b] = a*b``."""
    n = field.size
    t = np.zeros((n, n), dtype=np.uint8)
    for a in range(n):
        for b in range(a, n):
            t[a, b] = t[b, a] = field.mul(a, b)
    t.setflags(write=False)
    return t


@lru_cache(maxsize=None)
def inverse_table(field: FieldSpec) -> np.ndarray:
    t = mul_table(field)
    inv = np.zeros(field.size, dtype=np.uint8)
    for a in range(1, field.size):
        (b,) = np.nonzero(t[a] == 1)
        inv[a] = b[0]
    inv.setflags(write=False)
    return inv


def poly_to_str(value: int, var: str = "x") -> str:
    """High-degree-first rendering, e.g. 0b1011 -> 'x^3+x+1'."""
    if value == 0:
        return "0"
    terms = []
    for i in range(value.bit_length() - 1, -1, -1):
        if value >> i & 1:
            terms.append("1" if i == 0 else var if i == 1 else f"{var}^{i}")
    return "+".join(terms)


GF16 = FieldSpec(4, 0b0011)          # x^4 + x + 1
GF256_AES = FieldSpec(8, 0b00011011)  # x^8 + x^4 + x^3 + x + 1


@dataclass(frozen=True)
class GFElement:
    value: int
    field: FieldSpec

    def __post_init__(self):
        if not 0 <= self.value < self.field.size:
            raise FieldError(f"{self.value:#x} is not an element of {self.field!r}")

    def _check(self, other) -> "GFElement":
        if not isinstance(other, GFElement):
            return NotImplemented
        if other.field != self.field:
            raise FieldError(f"field mismatch: {self.field!r} vs {other.field!r}")
        return other

    def __add__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return GFElement(self.value ^ other.value, self.field)

    __sub__ = __add__
    __xor__ = __add__

    def __mul__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return GFElement(int(mul_table(self.field)[self.value, other.value]), self.field)

    def inverse(self) -> "GFElement":
        return GFElement(self.field.inv(self.value), self.field)

    def __bool__(self):
        return self.value != 0

    def __int__(self):
        return self.value

    def __index__(self):
        return self.value

    def __repr__(self):
        digits = (self.field.degree + 3) // 4
        return f"{self.value:0{digits}X}"


def gf_add(x: GFElement, y: GFElement) -> GFElement:
    return x + y


def gf_mul(x: GFElement, y: GFElement) -> GFElement:
    return x * y


def gf_sum(items: Iterable[GFElement], field: FieldSpec) -> GFElement:
    acc = field(0)
    for it in items:
        acc = acc + it
    return acc


@dataclass(frozen=True)
class BitMatrix:
    """Linear map over GF(2) stored as row bitmasks.

    ``rows[k]`` has bit j set when output bit k depends on input bit j.
    """

    rows: tuple[int, ...]
    ncols: int

    @classmethod
    def identity(cls, n: int) -> "BitMatrix":
        return cls(tuple(1 << i for i in range(n)), n)

    @classmethod
    def from_function(cls, fn, nbits: int) -> "BitMatrix":
        """Read the matrix of a GF(2)-linear ``fn`` off its images of unit vectors."""
        cols = [fn(1 << j) for j in range(nbits)]
        out_bits = max([c.bit_length() for c in cols] + [nbits])
        rows = tuple(
            sum(1 << j for j in range(nbits) if cols[j] >> k & 1) for k in range(out_bits)
        )
        return cls(rows, nbits)

    @property
    def nrows(self) -> int:
        return len(self.rows)

    def apply(self, x: int) -> int:
        out = 0
        for k, row in enumerate(self.rows):
            out |= (bin(row & x).count("1") & 1) << k
        return out

    def support(self, k: int) -> frozenset[int]:
        row = self.rows[k]
        return frozenset(j for j in range(self.ncols) if row >> j & 1)

    def __xor__(self, other: "BitMatrix") -> "BitMatrix":
        if (self.nrows, self.ncols) != (other.nrows, other.ncols):
            raise ValueError("shape mismatch")
        return BitMatrix(tuple(a ^ b for a, b in zip(self.rows, other.rows)), self.ncols)

    def rank(self) -> int:
        rows = list(self.rows)
        rank = 0
        for bit in range(self.ncols):
            pivot = next((i for i in range(rank, len(rows)) if rows[i] >> bit & 1), None)
            if pivot is None:
                continue
            rows[rank], rows[pivot] = rows[pivot], rows[rank]
            for i in range(len(rows)):
                if i != rank and rows[i] >> bit & 1:
                    rows[i] ^= rows[rank]
            rank += 1
        return rank

    def to_array(self) -> np.ndarray:
        return np.array(
            [[r >> j & 1 for j in range(self.ncols)] for r in self.rows], dtype=np.uint8
        )


def gf_mul_const_expand(c: GFElement) -> BitMatrix:
    """Bit-level matrix of ``a -> c*a``: output bit k is the XOR of input bits in row k."""
    field = c.field
    return BitMatrix.from_function(lambda a: field.mul(c.value, a), field.degree)


def elements(field: FieldSpec, values: Sequence[int]) -> tuple[GFElement, ...]:
    return tuple(GFElement(v, field) for v in values)
