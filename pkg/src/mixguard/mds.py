"""MixColumn matrices: catalog, column/state application and MDS criteria."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .gf import (
    GF16,
    GF256_AES,
    BitMatrix,
    FieldError,
    FieldSpec,
    GFElement,
    gf_sum,
    inverse_table,
    mul_table,
)

#: enumerated-candidate limit for the exhaustive branch-number sweep
EXHAUSTIVE_LIMIT = 1 << 24


class CapabilityError(RuntimeError):
    """Requested computation exceeds what the chosen strategy supports."""


class UnknownMatrixError(KeyError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


@dataclass(frozen=True)
class StateColumn:
    entries: tuple[GFElement, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("empty column")
        f = self.entries[0].field
        if any(e.field != f for e in self.entries):
            raise FieldError("column entries from different fields")

    @classmethod
    def of(cls, field: FieldSpec, values: Sequence[int]) -> "StateColumn":
        return cls(tuple(GFElement(v, field) for v in values))

    @classmethod
    def unpack(cls, field: FieldSpec, n: int, code: int) -> "StateColumn":
        m = field.degree
        return cls.of(field, [(code >> (j * m)) & field.mask for j in range(n)])

    @property
    def field(self) -> FieldSpec:
        return self.entries[0].field

    def pack(self) -> int:
        """Element j occupies bits [j*m, (j+1)*m)."""
        m = self.field.degree
        return sum(e.value << (j * m) for j, e in enumerate(self.entries))

    def values(self) -> tuple[int, ...]:
        return tuple(e.value for e in self.entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __xor__(self, other: "StateColumn") -> "StateColumn":
        if len(other) != len(self):
            raise ValueError("length mismatch")
        return StateColumn(tuple(a + b for a, b in zip(self, other)))

    def __repr__(self):
        return "(" + ",".join(repr(e) for e in self.entries) + ")"


@dataclass(frozen=True)
class MdsMatrix:
    name: str
    field: FieldSpec
    coeffs: tuple[tuple[GFElement, ...], ...]
    block_bits: int = 64

    def __post_init__(self):
        n = len(self.coeffs)
        if n < 2:
            raise ValueError("matrix dimension must be at least 2")
        for row in self.coeffs:
            if len(row) != n:
                raise ValueError("matrix must be square")
            if any(c.field != self.field for c in row):
                raise FieldError("coefficient outside the matrix field")

    @classmethod
    def from_ints(cls, name: str, field: FieldSpec, rows: Sequence[Sequence[int]], block_bits: int = 64):
        return cls(name, field, tuple(tuple(GFElement(v, field) for v in r) for r in rows), block_bits)

    @property
    def n(self) -> int:
        return len(self.coeffs)

    @property
    def column_bits(self) -> int:
        return self.n * self.field.degree

    @property
    def state_columns(self) -> int:
        """Columns per cipher state (e.g. 2 byte-columns for a 64-bit KLEIN state)."""
        return max(1, self.block_bits // self.column_bits)

    def int_rows(self) -> list[list[int]]:
        return [[c.value for c in row] for row in self.coeffs]

    def __repr__(self):
        rows = " ".join("".join(repr(c) for c in r) for r in self.coeffs)
        return f"MdsMatrix({self.name!r}, {self.field!r}, [{rows}])"

    @cached_property
    def _tables(self) -> np.ndarray:
        # tables[j, v] = packed image of v placed at input position j
        m, n = self.field.degree, self.n
        mt = mul_table(self.field).astype(np.uint64)
        tables = np.zeros((n, self.field.size), dtype=np.uint64)
        for j in range(n):
            for i in range(n):
                tables[j] ^= mt[self.coeffs[i][j].value] << np.uint64(i * m)
        tables.setflags(write=False)
        return tables

    def apply_codes(self, codes) -> np.ndarray:
        """Vectorised MixColumn over packed column codes."""
        codes = np.asarray(codes, dtype=np.uint64)
        m = np.uint64(self.field.degree)
        mask = np.uint64(self.field.mask)
        out = np.zeros(codes.shape, dtype=np.uint64)
        for j in range(self.n):
            out ^= self._tables[j][(codes >> (m * np.uint64(j))) & mask]
        return out

    def apply_code(self, code: int) -> int:
        return int(self.apply_codes(np.array([code], dtype=np.uint64))[0])

    def bit_matrix(self) -> BitMatrix:
        """The column map as a (n*m) x (n*m) matrix over GF(2)."""
        return BitMatrix.from_function(self.apply_code, self.column_bits)


def _circulant(first_row: Sequence[int]) -> list[list[int]]:
    n = len(first_row)
    return [[first_row[(j - i) % n] for j in range(n)] for i in range(n)]


_CATALOG_ROWS = {
    "Midori64-MC": (GF16, [[0, 1, 1, 1], [1, 0, 1, 1], [1, 1, 0, 1], [1, 1, 1, 0]]),
    # byte-wise (two-nibble) circulant(2,3,1,1) with the AES polynomial, shared with KLEIN
    "Midori64-MB": (GF256_AES, _circulant([2, 3, 1, 1])),
    "LED": (GF16, [[0x4, 0x1, 0x2, 0x2], [0x8, 0x6, 0x5, 0x6], [0xB, 0xE, 0xA, 0x9], [0x2, 0x2, 0xF, 0xB]]),
    "KLEIN": (GF256_AES, _circulant([2, 3, 1, 1])),
}

CATALOG_NAMES = tuple(_CATALOG_ROWS)


def catalog_get(name: str) -> MdsMatrix:
    key = {k.lower(): k for k in _CATALOG_ROWS}.get(name.lower())
    if key is None:
        raise UnknownMatrixError(f"unknown matrix {name!r}; known: {', '.join(CATALOG_NAMES)}")
    field, rows = _CATALOG_ROWS[key]
    return MdsMatrix.from_ints(key, field, rows)


def identity_matrix(field: FieldSpec = GF16, n: int = 4) -> MdsMatrix:
    return MdsMatrix.from_ints("identity", field, [[int(i == j) for j in range(n)] for i in range(n)])


def load_matrix_file(path) -> MdsMatrix:
    """Read a JSON matrix definition.

    Fields: ``name``, ``degree``, ``reduction_poly`` (hex string), ``rows``
    (each row a string of hex digits, ``degree/4`` digits per entry, or a
    list of hex strings), optional ``block_bits``.
    """
    data = json.loads(Path(path).read_text())
    try:
        degree = int(data["degree"])
        poly = int(str(data["reduction_poly"]), 16)
        field = FieldSpec(degree, poly)
        width = (degree + 3) // 4
        rows = []
        for r in data["rows"]:
            if isinstance(r, str):
                digits = r.replace(" ", "").replace(",", "")
                if len(digits) % width:
                    raise ValueError(f"row {r!r} is not a multiple of {width} hex digits")
                rows.append([int(digits[i:i + width], 16) for i in range(0, len(digits), width)])
            else:
                rows.append([int(str(v), 16) for v in r])
        return MdsMatrix.from_ints(str(data["name"]), field, rows, int(data.get("block_bits", 64)))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed matrix file {path}: {exc}") from exc


def resolve_matrix(selector: str) -> MdsMatrix:
    """Catalog name, or path to a matrix file."""
    try:
        return catalog_get(selector)
    except UnknownMatrixError:
        p = Path(selector)
        if p.is_file():
            return load_matrix_file(p)
        raise


def check_column(m: MdsMatrix, col: StateColumn):
    if len(col) != m.n:
        raise ValueError(f"column has {len(col)} entries, matrix needs {m.n}")
    if col.field != m.field:
        raise FieldError(f"column over {col.field!r}, matrix over {m.field!r}")


def mix_column(m: MdsMatrix, col: StateColumn) -> StateColumn:
    check_column(m, col)
    return StateColumn(tuple(gf_sum((c * a for c, a in zip(row, col)), m.field) for row in m.coeffs))


def mix_state(m: MdsMatrix, state: Sequence[Sequence[GFElement]]) -> list[list[GFElement]]:
    """Apply MixColumn to each column of a row-major ``n x k`` state."""
    if len(state) != m.n:
        raise ValueError(f"state has {len(state)} rows, matrix needs {m.n}")
    ncols = len(state[0])
    if any(len(r) != ncols for r in state):
        raise ValueError("ragged state")
    out = [[None] * ncols for _ in range(m.n)]
    for c in range(ncols):
        res = mix_column(m, StateColumn(tuple(state[i][c] for i in range(m.n))))
        for i in range(m.n):
            out[i][c] = res[i]
    return out


def bundle_weight(col) -> int:
    return sum(1 for e in col if int(e) != 0)


def bundle_weights(codes: np.ndarray, n: int, m: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64)
    mask = np.uint64((1 << m) - 1)
    w = np.zeros(codes.shape, dtype=np.int64)
    for j in range(n):
        w += ((codes >> np.uint64(j * m)) & mask) != 0
    return w


def matrix_product(a: MdsMatrix, b: MdsMatrix, name: str | None = None) -> MdsMatrix:
    if a.field != b.field or a.n != b.n:
        raise ValueError("incompatible matrices")
    n = a.n
    rows = tuple(
        tuple(gf_sum((a.coeffs[i][k] * b.coeffs[k][j] for k in range(n)), a.field) for j in range(n))
        for i in range(n)
    )
    return MdsMatrix(name or f"{a.name}*{b.name}", a.field, rows, a.block_bits)


def is_identity(m: MdsMatrix) -> bool:
    return all(m.coeffs[i][j].value == int(i == j) for i in range(m.n) for j in range(m.n))


def is_involutory(m: MdsMatrix) -> bool:
    return is_identity(matrix_product(m, m))


def _gauss_rank(rows: list[list[int]], field: FieldSpec) -> int:
    rows = [r[:] for r in rows]
    mt, inv = mul_table(field), inverse_table(field)
    rank, ncols = 0, len(rows[0]) if rows else 0
    for c in range(ncols):
        p = next((i for i in range(rank, len(rows)) if rows[i][c]), None)
        if p is None:
            continue
        rows[rank], rows[p] = rows[p], rows[rank]
        s = inv[rows[rank][c]]
        rows[rank] = [int(mt[s, v]) for v in rows[rank]]
        for i in range(len(rows)):
            if i != rank and rows[i][c]:
                f = rows[i][c]
                rows[i] = [v ^ int(mt[f, w]) for v, w in zip(rows[i], rows[rank])]
        rank += 1
    return rank


def matrix_inverse(m: MdsMatrix) -> MdsMatrix:
    """Gauss-Jordan inversion over the matrix field."""
    n, field = m.n, m.field
    mt, inv = mul_table(field), inverse_table(field)
    aug = [row + [int(i == j) for j in range(n)] for i, row in enumerate(m.int_rows())]
    for c in range(n):
        p = next((i for i in range(c, n) if aug[i][c]), None)
        if p is None:
            raise SingularMatrixError(f"{m.name} is singular")
        aug[c], aug[p] = aug[p], aug[c]
        s = inv[aug[c][c]]
        aug[c] = [int(mt[s, v]) for v in aug[c]]
        for i in range(n):
            if i != c and aug[i][c]:
                f = aug[i][c]
                aug[i] = [v ^ int(mt[f, w]) for v, w in zip(aug[i], aug[c])]
    return MdsMatrix.from_ints(f"{m.name}^-1", field, [r[n:] for r in aug], m.block_bits)


def is_invertible(m: MdsMatrix) -> bool:
    return _gauss_rank(m.int_rows(), m.field) == m.n


def all_minors_nonsingular(m: MdsMatrix) -> bool:
    """MDS criterion: every square submatrix is nonsingular."""
    rows = m.int_rows()
    n = m.n
    for k in range(1, n + 1):
        for ri in itertools.combinations(range(n), k):
            for ci in itertools.combinations(range(n), k):
                sub = [[rows[i][j] for j in ci] for i in ri]
                if _gauss_rank(sub, m.field) < k:
                    return False
    return True


def _branch_exhaustive(m: MdsMatrix, chunk: int = 1 << 20) -> int:
    n, deg = m.n, m.field.degree
    total = 1 << m.column_bits
    best = 2 * n
    for lo in range(1, total, chunk):
        codes = np.arange(lo, min(total, lo + chunk), dtype=np.uint64)
        w = bundle_weights(codes, n, deg) + bundle_weights(m.apply_codes(codes), n, deg)
        best = min(best, int(w.min()))
    return best


def low_weight_codes(n: int, field: FieldSpec, max_weight: int) -> np.ndarray:
    """Packed columns with 1..max_weight nonzero entries."""
    m = field.degree
    nz = np.arange(1, field.size, dtype=np.uint64)
    parts = []
    for w in range(1, max_weight + 1):
        for pos in itertools.combinations(range(n), w):
            grids = np.meshgrid(*([nz] * w), indexing="ij")
            code = np.zeros(grids[0].shape, dtype=np.uint64)
            for p, g in zip(pos, grids):
                code |= g << np.uint64(p * m)
            parts.append(code.ravel())
    return np.concatenate(parts)


def _branch_restricted(m: MdsMatrix) -> int:
    # A pair (X, L(X)) with total weight <= n has one side of weight <= n//2,
    # so sweeping low-weight X under L and under L^-1 finds every such pair.
    try:
        inv = matrix_inverse(m)
    except SingularMatrixError:
        raise CapabilityError(f"restricted branch-number search needs an invertible matrix; {m.name} is singular")
    n, deg = m.n, m.field.degree
    codes = low_weight_codes(n, m.field, n // 2)
    wx = bundle_weights(codes, n, deg)
    best = n + 1
    for lin in (m, inv):
        best = min(best, int((wx + bundle_weights(lin.apply_codes(codes), n, deg)).min()))
    return best


def branch_number(m: MdsMatrix, strategy: str = "auto", limit: int = EXHAUSTIVE_LIMIT) -> int:
    """min over nonzero X of bundle_weight(X) + bundle_weight(L(X)).

    ``strategy``: ``exhaustive`` sweeps every nonzero column (refused above
    ``limit`` candidates), ``restricted`` sweeps low-weight columns through
    the matrix and its inverse, ``auto`` picks exhaustive when within limit.
    """
    candidates = (1 << m.column_bits) - 1
    if strategy == "auto":
        strategy = "exhaustive" if candidates <= limit else "restricted"
    if strategy == "exhaustive":
        if candidates > limit:
            raise CapabilityError(
                f"exhaustive sweep of {candidates} columns exceeds limit {limit}; use the restricted strategy"
            )
        return _branch_exhaustive(m)
    if strategy == "restricted":
        return _branch_restricted(m)
    raise ValueError(f"unknown strategy {strategy!r}")


@dataclass(frozen=True)
class MdsReport:
    name: str
    branch_number: int
    is_mds: bool
    is_almost_mds: bool
    is_involutory: bool

    def render(self) -> str:
        if self.is_mds:
            kind = "MDS=yes"
        elif self.is_almost_mds:
            kind = "almost-MDS=yes"
        else:
            kind = "MDS=no"
        return f"{self.name}: N={self.branch_number} {kind} involutory={'yes' if self.is_involutory else 'no'}"

    def record(self) -> dict:
        return {
            "matrix": self.name,
            "branch_number": self.branch_number,
            "mds": self.is_mds,
            "almost_mds": self.is_almost_mds,
            "involutory": self.is_involutory,
        }


def classify(m: MdsMatrix, strategy: str = "auto") -> MdsReport:
    N = branch_number(m, strategy)
    mds = N == m.n + 1
    if strategy != "exhaustive" and (1 << m.column_bits) - 1 > EXHAUSTIVE_LIMIT:
        # independent confirmation for the sampled-space path
        if mds != all_minors_nonsingular(m):
            raise AssertionError(f"{m.name}: branch-number search and minor criterion disagree")
    return MdsReport(m.name, N, mds, N == m.n, is_involutory(m))
