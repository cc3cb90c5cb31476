"""Bit-level XOR expansion of linear layers and 2-input XOR gate counting.

Every output bit is an XOR tree over its input-bit support; a bit with t
terms costs t - 1 gates.  Nothing is shared between outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Sequence

from .gf import FieldSpec, GFElement, gf_mul_const_expand
from .mds import MdsMatrix
from .signature import SchemeKind, SignatureScheme, derive_scheme

# Published XOR counts (mix, ccs total, interleaved total).  Used only to
# flag a reconstructed matrix whose counts disagree.
PUBLISHED_GATE_COUNTS = {
    "Midori64-MC": (128, 176, 160),
    "Midori64-MB": (256, 304, 416),
    "LED": (444, 564, 672),
    "KLEIN": (256, 304, 416),
}


@dataclass(frozen=True)
class XorNetwork:
    # outputs[o] = set of input-bit indices XORed into output bit o
    outputs: tuple[frozenset[int], ...]
    labels: dict = dc_field(default_factory=dict, compare=False, hash=False)
    output_labels: tuple[str, ...] = dc_field(default=(), compare=False)

    def evaluate(self, bits: int) -> int:
        """Packed output bits for packed input ``bits``."""
        out = 0
        for o, terms in enumerate(self.outputs):
            par = 0
            for t in terms:
                par ^= bits >> t & 1
            out |= par << o
        return out

    def term_names(self, o: int) -> list[str]:
        return [self.labels.get(t, str(t)) for t in sorted(self.outputs[o])]

    def gate_count(self) -> int:
        return count_gates(self)


def bit_label(elem: int, bit: int, degree: int, ncols: int, col: int) -> str:
    """Symbol ``a_{ij}``: i counts bits from the top (1 = x^(m-1)), j is the state index in hex."""
    return f"a{degree - bit}{elem * ncols + col:x}"


def expand_linear(
    rows: Sequence[Sequence[GFElement]],
    field: FieldSpec,
    columns: int = 1,
    out_names: Sequence[str] | None = None,
    state_columns: int | None = None,
) -> XorNetwork:
    """Expand ``rows`` (coefficient vectors over ``field``) applied to ``columns`` input columns.

    Input bit index: ``col * n*m + elem * m + bit``.  Outputs are ordered
    column-major, then row, then bit.
    """
    m = field.degree
    n = len(rows[0])
    ncols = state_columns or columns
    expanded = {}
    outputs, olabels, labels = [], [], {}
    for col in range(columns):
        for e in range(n):
            for b in range(m):
                labels[col * n * m + e * m + b] = bit_label(e, b, m, ncols, col)
        for r, row in enumerate(rows):
            for k in range(m):
                acc: set[int] = set()
                for e, c in enumerate(row):
                    bm = expanded.get(c.value)
                    if bm is None:
                        bm = expanded[c.value] = gf_mul_const_expand(c)
                    # symmetric difference cancels repeated terms
                    acc ^= {col * n * m + e * m + j for j in bm.support(k)}
                outputs.append(frozenset(acc))
                name = out_names[r] if out_names else f"y{r}"
                olabels.append(f"{name}[c{col}].x{k}")
    return XorNetwork(tuple(outputs), labels, tuple(olabels))


def expand_mixcolumn(m: MdsMatrix, columns: int | None = None) -> XorNetwork:
    """Network for ``columns`` MixColumn columns (default: the full cipher state)."""
    columns = m.state_columns if columns is None else columns
    names = [f"r{i}" for i in range(m.n)]
    return expand_linear(m.coeffs, m.field, columns, names, m.state_columns)


def expand_signature(s: SignatureScheme, columns: int | None = None) -> XorNetwork:
    """Predictor network: signature bits from input bits."""
    mat = s.matrix
    columns = mat.state_columns if columns is None else columns
    names = ["ccs"] if s.kind is SchemeKind.CCS else ["even", "odd"]
    return expand_linear(s.predictor_coeffs, mat.field, columns, names, mat.state_columns)


def count_gates(net: XorNetwork) -> int:
    return sum(max(len(t) - 1, 0) for t in net.outputs)


def truncate_pct(x: Fraction) -> str:
    """Two decimals, truncated toward zero (27.027 -> '27.02')."""
    hundredths = int(x * 100)
    return f"{hundredths // 100}.{hundredths % 100:02d}"


@dataclass(frozen=True)
class GateCount:
    name: str
    mixcolumn_gates: int
    ccs_extra_gates: int
    interleaved_extra_gates: int

    @property
    def ccs_total(self) -> int:
        return self.mixcolumn_gates + self.ccs_extra_gates

    @property
    def interleaved_total(self) -> int:
        return self.mixcolumn_gates + self.interleaved_extra_gates

    @property
    def ccs_overhead_pct(self) -> Fraction:
        return Fraction(100 * self.ccs_extra_gates, self.mixcolumn_gates)

    @property
    def interleaved_overhead_pct(self) -> Fraction:
        return Fraction(100 * self.interleaved_extra_gates, self.mixcolumn_gates)

    def totals(self) -> tuple[int, int, int]:
        return (self.mixcolumn_gates, self.ccs_total, self.interleaved_total)

    def record(self) -> dict:
        return {
            "matrix": self.name,
            "mix": self.mixcolumn_gates,
            "ccs": self.ccs_total,
            "ccs_pct": float(truncate_pct(self.ccs_overhead_pct)),
            "inter": self.interleaved_total,
            "inter_pct": float(truncate_pct(self.interleaved_overhead_pct)),
        }


def gate_report(m: MdsMatrix) -> GateCount:
    """XOR counts for the full-state MixColumn and both predictor networks.

    The signature extras cover the predictor side only; output compaction
    and comparators are left out.
    """
    mix = count_gates(expand_mixcolumn(m))
    ccs = count_gates(expand_signature(derive_scheme(m, SchemeKind.CCS)))
    inter = count_gates(expand_signature(derive_scheme(m, SchemeKind.INTERLEAVED)))
    return GateCount(m.name, mix, ccs, inter)


@dataclass(frozen=True)
class PublishedComparison:
    name: str
    computed: tuple[int, int, int]
    published: tuple[int, int, int] | None

    @property
    def matches(self) -> bool | None:
        return None if self.published is None else self.computed == self.published

    def message(self) -> str:
        if self.published is None:
            return f"{self.name}: no published reference"
        if self.matches:
            return f"{self.name}: matches published counts {self.published}"
        return (
            f"{self.name}: RECONSTRUCTION MISMATCH computed {self.computed} "
            f"vs published {self.published}"
        )


def compare_published(report: GateCount) -> PublishedComparison:
    return PublishedComparison(report.name, report.totals(), PUBLISHED_GATE_COUNTS.get(report.name))


def render_table(reports: Sequence[GateCount]) -> str:
    header = f"{'Matrix':<14} {'MixCol XOR':>10} {'CCS XOR':>18} {'Inter. CCS XOR':>18}"
    lines = [header, "-" * len(header)]
    for r in reports:
        ccs = f"{r.ccs_total} ({truncate_pct(r.ccs_overhead_pct)}%)"
        inter = f"{r.interleaved_total} ({truncate_pct(r.interleaved_overhead_pct)}%)"
        lines.append(f"{r.name:<14} {r.mixcolumn_gates:>10} {ccs:>18} {inter:>18}")
    return "\n".join(lines)
