"""Cumulative column signatures (CCS) and their interleaved variant.

A CCS predicts the XOR of all outputs of a MixColumn column straight from
its inputs; the coefficient for input j is the XOR of column j of the
matrix.  The interleaved scheme keeps two sums, one over the even output
rows and one over the odd rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .gf import GFElement, gf_sum, mul_table
from .mds import MdsMatrix, StateColumn, check_column


class SchemeKind(str, Enum):
    CCS = "ccs"
    INTERLEAVED = "interleaved"

    @classmethod
    def parse(cls, text: str) -> "SchemeKind":
        t = text.lower().replace("_", "-")
        if t in ("ccs",):
            return cls.CCS
        if t in ("interleaved", "interleaved-ccs", "inter", "iccs"):
            return cls.INTERLEAVED
        raise ValueError(f"unknown signature kind {text!r}")


def row_groups(kind: SchemeKind, n: int) -> tuple[tuple[int, ...], ...]:
    """Output rows folded into each signature sum."""
    if kind is SchemeKind.CCS:
        return (tuple(range(n)),)
    return (tuple(range(0, n, 2)), tuple(range(1, n, 2)))


@dataclass(frozen=True)
class SignatureScheme:
    kind: SchemeKind
    matrix: MdsMatrix
    # one coefficient vector per signature sum; applies to every state column
    predictor_coeffs: tuple[tuple[GFElement, ...], ...]

    @property
    def groups(self) -> tuple[tuple[int, ...], ...]:
        return row_groups(self.kind, self.matrix.n)

    def _tables(self) -> list[np.ndarray]:
        mt = mul_table(self.matrix.field).astype(np.uint64)
        return [np.stack([mt[c.value] for c in vec]) for vec in self.predictor_coeffs]


def derive_scheme(m: MdsMatrix, kind: SchemeKind | str) -> SignatureScheme:
    kind = SchemeKind.parse(kind) if isinstance(kind, str) else kind
    coeffs = tuple(
        tuple(gf_sum((m.coeffs[i][j] for i in group), m.field) for j in range(m.n))
        for group in row_groups(kind, m.n)
    )
    return SignatureScheme(kind, m, coeffs)


def predict(s: SignatureScheme, col: StateColumn):
    """Predicted signature: an element for CCS, an (even, odd) pair for interleaved."""
    check_column(s.matrix, col)
    sums = tuple(gf_sum((c * a for c, a in zip(vec, col)), col.field) for vec in s.predictor_coeffs)
    return sums[0] if s.kind is SchemeKind.CCS else sums


def actual_signature(kind: SchemeKind | str, out_col: StateColumn):
    kind = SchemeKind.parse(kind) if isinstance(kind, str) else kind
    sums = tuple(gf_sum((out_col[i] for i in g), out_col.field) for g in row_groups(kind, len(out_col)))
    return sums[0] if kind is SchemeKind.CCS else sums


@dataclass(frozen=True)
class SignatureCheckResult:
    predicted: GFElement | tuple[GFElement, ...]
    actual: GFElement | tuple[GFElement, ...]
    detected_mismatch: bool
    # per-sum mismatch flags, one entry per signature sum
    per_sum: tuple[bool, ...]


def check(s: SignatureScheme, in_col: StateColumn, out_col: StateColumn) -> SignatureCheckResult:
    if len(out_col) != s.matrix.n:
        raise ValueError("output column length does not match the matrix")
    p = predict(s, in_col)
    a = actual_signature(s.kind, out_col)
    if s.kind is SchemeKind.CCS:
        per_sum = (p != a,)
    else:
        per_sum = tuple(x != y for x, y in zip(p, a))
    return SignatureCheckResult(p, a, any(per_sum), per_sum)


# Vectorised forms over packed column codes; shape (sums, len(codes)).

def predict_codes(s: SignatureScheme, codes) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64)
    m = s.matrix.field.degree
    mask = np.uint64(s.matrix.field.mask)
    out = np.zeros((len(s.predictor_coeffs),) + codes.shape, dtype=np.uint64)
    for g, tab in enumerate(s._tables()):
        for j in range(s.matrix.n):
            out[g] ^= tab[j][(codes >> np.uint64(j * m)) & mask]
    return out


def actual_codes(kind: SchemeKind, n: int, m: int, out_codes) -> np.ndarray:
    out_codes = np.asarray(out_codes, dtype=np.uint64)
    mask = np.uint64((1 << m) - 1)
    groups = row_groups(kind, n)
    out = np.zeros((len(groups),) + out_codes.shape, dtype=np.uint64)
    for g, rows in enumerate(groups):
        for i in rows:
            out[g] ^= (out_codes >> np.uint64(i * m)) & mask
    return out


def mismatch_codes(s: SignatureScheme, in_codes, out_codes) -> np.ndarray:
    """Per-sum mismatch flags, shape (sums, len(codes))."""
    n, m = s.matrix.n, s.matrix.field.degree
    return predict_codes(s, in_codes) != actual_codes(s.kind, n, m, out_codes)


def verify_identity(s: SignatureScheme, codes: Sequence[int] | np.ndarray) -> int:
    """Number of columns whose fault-free output violates the predicted signature."""
    codes = np.asarray(codes, dtype=np.uint64)
    bad = mismatch_codes(s, codes, s.matrix.apply_codes(codes)).any(axis=0)
    return int(bad.sum())
