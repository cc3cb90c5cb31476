"""Fault-injection campaigns on a protected MixColumn output register.

Faults hit the MixColumn output register and, for redundancy schemes, the
redundant register.  Every fault is a register update
``new = ((old & ~clear) | set) ^ flip``, so bit flips and stuck-at faults
share one representation.

Randomness is derived per block of trials from ``(seed, block index)``;
tallies are commutative, so a campaign's result is independent of how
blocks are spread over workers.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from enum import Enum
from fractions import Fraction
from pathlib import Path

import numpy as np

from .mds import (
    CapabilityError,
    MdsMatrix,
    StateColumn,
    is_invertible,
    resolve_matrix,
)
from .gf import BitMatrix
from .signature import SchemeKind, derive_scheme, mismatch_codes

BLOCK = 1 << 16
EXHAUSTIVE_CAP = 1 << 24
EXEMPLAR_LIMIT = 10


class ConfigError(ValueError):
    pass


class FaultKind(str, Enum):
    SINGLE_BIT = "single-bit"
    SINGLE_NIBBLE = "single-nibble"
    SINGLE_BYTE = "single-byte"
    MULTI_BIT = "multi-bit"
    BIASED_STUCK = "biased-stuck"


class Target(str, Enum):
    ORIGINAL = "original-only"
    REDUNDANT = "redundant-only"
    IDENTICAL = "both-identical"
    INDEPENDENT = "both-independent"


class SchemeType(str, Enum):
    SIGNATURE = "signature"
    SPATIAL_NAIVE = "spatial-naive"
    TIME_RECOMPUTE = "time-recompute"
    SPATIAL_FST = "spatial-fst"


def _enum(cls, value, what):
    try:
        return cls(value)
    except ValueError:
        choices = ", ".join(e.value for e in cls)
        raise ConfigError(f"unknown {what} {value!r}; expected one of {choices}") from None


@dataclass
class FaultBatch:
    """Vector of register updates; all arrays share one shape."""

    clear: np.ndarray
    set: np.ndarray
    flip: np.ndarray

    @classmethod
    def flips(cls, flip: np.ndarray) -> "FaultBatch":
        z = np.zeros_like(flip)
        return cls(z, z.copy(), flip)

    def apply(self, regs: np.ndarray) -> np.ndarray:
        return ((regs & ~self.clear) | self.set) ^ self.flip

    def take(self, idx) -> "FaultBatch":
        return FaultBatch(self.clear[idx], self.set[idx], self.flip[idx])


@dataclass(frozen=True)
class FaultModel:
    kind: FaultKind
    target: Target = Target.ORIGINAL
    k: int = 1
    # biased-stuck parameters: the low ``width`` bits of one element are forced to ``value``
    value: int = 0
    width: int | None = None
    # fixes the element (stuck) or nibble/byte slot; None draws it uniformly
    position: int | None = None

    def validate(self, n: int, m: int):
        nbits = n * m
        if self.kind is FaultKind.MULTI_BIT and not 1 <= self.k <= nbits:
            raise ConfigError(f"multi-bit fault needs 1 <= k <= {nbits}, got {self.k}")
        if self.kind is FaultKind.SINGLE_BYTE and nbits < 8:
            raise ConfigError("single-byte faults need a register of at least 8 bits")
        if self.kind is FaultKind.BIASED_STUCK:
            w = self.width if self.width is not None else m
            if not 1 <= w <= m:
                raise ConfigError(f"stuck width {w} exceeds element width {m}")
            if not 0 <= self.value < (1 << w):
                raise ConfigError(f"stuck value {self.value:#x} does not fit in {w} bits")
        slots = self.slots(n, m)
        if self.position is not None and not 0 <= self.position < slots:
            raise ConfigError(f"position {self.position} outside 0..{slots - 1}")

    def slots(self, n: int, m: int) -> int:
        nbits = n * m
        return {
            FaultKind.SINGLE_NIBBLE: nbits // 4,
            FaultKind.SINGLE_BYTE: nbits // 8,
            FaultKind.BIASED_STUCK: n,
        }.get(self.kind, nbits)

    def label(self) -> str:
        if self.kind is FaultKind.MULTI_BIT:
            return f"multi-bit({self.k})"
        if self.kind is FaultKind.BIASED_STUCK:
            width = "elem" if self.width is None else self.width
            return f"biased-stuck({self.value:#x},{width})"
        return self.kind.value

    # -- enumeration -----------------------------------------------------

    def space_size(self, n: int, m: int) -> int:
        nbits = n * m
        pos = 1 if self.position is not None else self.slots(n, m)
        if self.kind is FaultKind.SINGLE_BIT:
            return pos
        if self.kind is FaultKind.SINGLE_NIBBLE:
            return pos * 15
        if self.kind is FaultKind.SINGLE_BYTE:
            return pos * 255
        if self.kind is FaultKind.MULTI_BIT:
            return math.comb(nbits, self.k)
        return pos

    def enumerate(self, n: int, m: int) -> FaultBatch:
        """Every distinct fault action, in a fixed order."""
        nbits = n * m
        if self.kind is FaultKind.MULTI_BIT:
            masks = [sum(1 << b for b in c) for c in itertools.combinations(range(nbits), self.k)]
            return FaultBatch.flips(np.array(masks, dtype=np.uint64))
        return self._at(np.arange(self.space_size(n, m), dtype=np.uint64), n, m)

    def _at(self, idx: np.ndarray, n: int, m: int) -> FaultBatch:
        base = np.uint64(self.position) if self.position is not None else None
        if self.kind is FaultKind.SINGLE_BIT:
            pos = idx if base is None else np.full_like(idx, base)
            return FaultBatch.flips(np.uint64(1) << pos)
        if self.kind in (FaultKind.SINGLE_NIBBLE, FaultKind.SINGLE_BYTE):
            width, nv = (4, 15) if self.kind is FaultKind.SINGLE_NIBBLE else (8, 255)
            pos = idx // np.uint64(nv) if base is None else np.full_like(idx, base)
            val = idx % np.uint64(nv) + np.uint64(1)
            return FaultBatch.flips(val << (pos * np.uint64(width)))
        if self.kind is FaultKind.BIASED_STUCK:
            pos = idx if base is None else np.full_like(idx, base)
            shift = pos * np.uint64(m)
            w = self.width if self.width is not None else m
            clear = np.uint64((1 << w) - 1) << shift
            setv = np.uint64(self.value) << shift
            return FaultBatch(clear, setv, np.zeros_like(idx))
        raise AssertionError(self.kind)

    def draw(self, rng: np.random.Generator, count: int, n: int, m: int) -> FaultBatch:
        nbits = n * m
        if self.kind is FaultKind.MULTI_BIT:
            bits = np.argsort(rng.random((count, nbits)), axis=1)[:, : self.k].astype(np.uint64)
            flip = np.bitwise_or.reduce(np.uint64(1) << bits, axis=1)
            return FaultBatch.flips(flip)
        idx = rng.integers(0, self.space_size(n, m), size=count, dtype=np.uint64)
        return self._at(idx, n, m)


@dataclass(frozen=True)
class FaultDescriptor:
    kind: str
    diff: int          # XOR of register before and after
    clear: int = 0
    set: int = 0
    flip: int = 0


def _descriptor(model: FaultModel, batch: FaultBatch, before: int, after: int) -> FaultDescriptor:
    return FaultDescriptor(
        model.label(), before ^ after, int(batch.clear[0]), int(batch.set[0]), int(batch.flip[0])
    )


def trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def apply_fault(value: StateColumn, model: FaultModel, rng: np.random.Generator):
    """Inject one fault into a column; returns (faulted column, descriptor)."""
    n, m = len(value), value.field.degree
    model.validate(n, m)
    batch = model.draw(rng, 1, n, m)
    before = value.pack()
    after = int(batch.apply(np.array([before], dtype=np.uint64))[0])
    return StateColumn.unpack(value.field, n, after), _descriptor(model, batch, before, after)


def apply_fault_pair(original: StateColumn, redundant: StateColumn, model: FaultModel, rng):
    """Inject per ``model.target`` into two registers; returns ((col, desc|None), (col, desc|None))."""
    n, m = len(original), original.field.degree
    model.validate(n, m)
    t = model.target
    first = model.draw(rng, 1, n, m)
    second = first if t is Target.IDENTICAL else model.draw(rng, 1, n, m)
    out = []
    for col, batch, hit in (
        (original, first, t is not Target.REDUNDANT),
        (redundant, second if t is not Target.REDUNDANT else first, t is not Target.ORIGINAL),
    ):
        if not hit:
            out.append((col, None))
            continue
        before = col.pack()
        after = int(batch.apply(np.array([before], dtype=np.uint64))[0])
        out.append((StateColumn.unpack(col.field, n, after), _descriptor(model, batch, before, after)))
    return tuple(out)


@dataclass(frozen=True)
class RedundancyScheme:
    kind: SchemeType
    signature: SchemeKind | None = None
    w: MdsMatrix | None = None

    def label(self) -> str:
        if self.kind is SchemeType.SIGNATURE:
            return f"signature({self.signature.value})"
        if self.kind is SchemeType.SPATIAL_FST:
            return f"spatial-fst({self.w.name if self.w else 'self'})"
        return self.kind.value


@dataclass(frozen=True)
class CampaignConfig:
    matrix: MdsMatrix
    scheme: RedundancyScheme
    model: FaultModel
    trials: int | str = "exhaustive"
    seed: int = 0
    # exhaustive mode: pair each fault with this many random inputs instead of all inputs
    inputs_per_fault: int | None = None
    exhaustive_cap: int = EXHAUSTIVE_CAP

    @property
    def exhaustive(self) -> bool:
        return self.trials == "exhaustive"

    @property
    def mapping(self) -> MdsMatrix | None:
        if self.scheme.kind is not SchemeType.SPATIAL_FST:
            return None
        return self.scheme.w or self.matrix

    def fault_combos(self) -> int:
        f = self.model.space_size(self.matrix.n, self.matrix.field.degree)
        return f * f if self.model.target is Target.INDEPENDENT else f

    def inputs_per_combo(self) -> int:
        return self.inputs_per_fault or (1 << self.matrix.column_bits)

    def total_trials(self) -> int:
        if self.exhaustive:
            return self.fault_combos() * self.inputs_per_combo()
        return int(self.trials)

    def validate(self):
        n, m = self.matrix.n, self.matrix.field.degree
        self.model.validate(n, m)
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        sk = self.scheme.kind
        if sk is SchemeType.SIGNATURE:
            if self.scheme.signature is None:
                raise ConfigError("signature scheme needs a kind (ccs or interleaved)")
            if self.model.target is not Target.ORIGINAL:
                raise ConfigError("signature schemes have a single register; target must be original-only")
        w = self.mapping
        if w is not None:
            if w.field != self.matrix.field or w.n != n:
                raise ConfigError("FST mapping must share the matrix field and dimension")
            if not is_invertible(w):
                raise ConfigError(f"FST mapping {w.name} is not invertible")
        if self.exhaustive:
            total = self.total_trials()
            if total > self.exhaustive_cap:
                raise CapabilityError(
                    f"exhaustive campaign needs {total} (input, fault) pairs, cap is "
                    f"{self.exhaustive_cap}; use sampled trials or inputs_per_fault"
                )
        else:
            if not isinstance(self.trials, int) or self.trials < 1:
                raise ConfigError("trials must be a positive integer or 'exhaustive'")
        if self.inputs_per_fault is not None and self.inputs_per_fault < 1:
            raise ConfigError("inputs_per_fault must be positive")


@dataclass
class _Tally:
    trials: int = 0
    injected: int = 0
    detected: int = 0
    per_sum: list[int] | None = None
    exemplars: list[tuple[int, int, int, int]] = dc_field(default_factory=list)

    def merge(self, other: "_Tally") -> "_Tally":
        per_sum = None
        if self.per_sum is not None or other.per_sum is not None:
            a = self.per_sum or [0] * len(other.per_sum)
            b = other.per_sum or [0] * len(a)
            per_sum = [x + y for x, y in zip(a, b)]
        ex = sorted(self.exemplars + other.exemplars)[:EXEMPLAR_LIMIT]
        return _Tally(
            self.trials + other.trials,
            self.injected + other.injected,
            self.detected + other.detected,
            per_sum,
            ex,
        )


def _block_faults(cfg: CampaignConfig, rng, t: np.ndarray):
    """Inputs and (first, second) fault batches for trial indices ``t``."""
    mat = cfg.matrix
    n, m = mat.n, mat.field.degree
    model = cfg.model
    count = len(t)
    if cfg.exhaustive:
        per = np.uint64(cfg.inputs_per_combo())
        combo = t // per
        if cfg.inputs_per_fault:
            inputs = rng.integers(0, 1 << mat.column_bits, size=count, dtype=np.uint64)
        else:
            inputs = t % per
        space = model.enumerate(n, m)
        if model.target is Target.INDEPENDENT:
            f = np.uint64(model.space_size(n, m))
            first, second = space.take(combo // f), space.take(combo % f)
        else:
            first = space.take(combo)
            second = first
    else:
        inputs = rng.integers(0, 1 << mat.column_bits, size=count, dtype=np.uint64)
        first = model.draw(rng, count, n, m)
        second = model.draw(rng, count, n, m) if model.target is Target.INDEPENDENT else first
    return inputs, first, second


@dataclass
class BlockOutcome:
    """Per-trial arrays for one block of a campaign."""

    trials: np.ndarray
    inputs: np.ndarray
    diff_original: np.ndarray
    diff_redundant: np.ndarray
    effective: np.ndarray
    detected: np.ndarray
    # signature schemes only: (sums, trials) mismatch flags
    per_sum: np.ndarray | None = None

    @property
    def undetected(self) -> np.ndarray:
        return self.effective & ~self.detected


def simulate_block(cfg: CampaignConfig, block: int) -> BlockOutcome:
    total = cfg.total_trials()
    lo, hi = block * BLOCK, min(total, (block + 1) * BLOCK)
    t = np.arange(lo, hi, dtype=np.uint64)
    rng = np.random.default_rng([cfg.seed, block])
    inputs, first, second = _block_faults(cfg, rng, t)
    mat, target, sk = cfg.matrix, cfg.model.target, cfg.scheme.kind
    y = mat.apply_codes(inputs)
    flags = None

    if sk is SchemeType.SIGNATURE:
        reg = first.apply(y)
        effective = reg != y
        flags = mismatch_codes(derive_scheme(mat, cfg.scheme.signature), inputs, reg)
        detected = flags.any(axis=0)
        d1, d2 = reg ^ y, np.zeros_like(y)
    else:
        w = cfg.mapping
        r1 = y
        r2 = w.apply_codes(y) if w is not None else y
        f1 = first.apply(r1) if target is not Target.REDUNDANT else r1
        f2 = second.apply(r2) if target is not Target.ORIGINAL else r2
        effective = (f1 != r1) | (f2 != r2)
        detected = (w.apply_codes(f1) if w is not None else f1) != f2
        d1, d2 = f1 ^ r1, f2 ^ r2

    if (detected & ~effective).any():
        raise AssertionError("fault-free trial flagged as detected")
    return BlockOutcome(t, inputs, d1, d2, effective, detected, flags)


def iter_outcomes(cfg: CampaignConfig):
    cfg.validate()
    for b in range(_nblocks(cfg)):
        yield simulate_block(cfg, b)


def _nblocks(cfg: CampaignConfig) -> int:
    return (cfg.total_trials() + BLOCK - 1) // BLOCK


def _run_block(cfg: CampaignConfig, block: int) -> _Tally:
    o = simulate_block(cfg, block)
    per_sum = None
    if o.per_sum is not None:
        per_sum = [int((f & o.effective).sum()) for f in o.per_sum]
    missed = np.nonzero(o.undetected)[0][:EXEMPLAR_LIMIT]
    exemplars = [
        (int(o.trials[i]), int(o.inputs[i]), int(o.diff_original[i]), int(o.diff_redundant[i]))
        for i in missed
    ]
    return _Tally(
        len(o.trials), int(o.effective.sum()), int((o.detected & o.effective).sum()), per_sum, exemplars
    )


@dataclass(frozen=True)
class Exemplar:
    trial: int
    input: int
    diff_original: int
    diff_redundant: int


@dataclass(frozen=True)
class CampaignReport:
    matrix: str
    scheme: str
    model: str
    target: str
    mode: str
    seed: int
    trials_run: int
    faults_injected: int
    detected: int
    undetected: int
    per_sum_detected: tuple[int, ...] | None
    undetected_exemplars: tuple[Exemplar, ...]
    hex_digits: int = 4

    @property
    def detection_rate(self) -> Fraction | None:
        if self.faults_injected == 0:
            return None
        return Fraction(self.detected, self.faults_injected)

    def rate_str(self) -> str:
        r = self.detection_rate
        return "n/a" if r is None else f"{float(r):.6f}"

    def per_sum_rates(self) -> tuple[str, ...] | None:
        if self.per_sum_detected is None or not self.faults_injected:
            return None
        return tuple(f"{d / self.faults_injected:.6f}" for d in self.per_sum_detected)

    def record(self) -> dict:
        h = self.hex_digits
        return {
            "matrix": self.matrix,
            "scheme": self.scheme,
            "model": self.model,
            "target": self.target,
            "mode": self.mode,
            "seed": self.seed,
            "trials_run": self.trials_run,
            "faults_injected": self.faults_injected,
            "detected": self.detected,
            "undetected": self.undetected,
            "detection_rate": self.rate_str(),
            "per_sum_detection_rate": list(self.per_sum_rates()) if self.per_sum_rates() else None,
            "undetected_exemplars": [
                {
                    "trial": e.trial,
                    "input": f"{e.input:0{h}x}",
                    "fault_original": f"{e.diff_original:0{h}x}",
                    "fault_redundant": f"{e.diff_redundant:0{h}x}",
                }
                for e in self.undetected_exemplars
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.record(), sort_keys=False)

    def render(self) -> str:
        h = self.hex_digits
        lines = [
            f"campaign  {self.matrix} / {self.scheme} / {self.model} / {self.target}",
            f"mode      {self.mode} (seed {self.seed})",
            f"trials    {self.trials_run}",
            f"injected  {self.faults_injected}",
            f"detected  {self.detected}",
            f"missed    {self.undetected}",
            f"rate      {self.rate_str()}",
        ]
        if self.per_sum_rates():
            lines.append("per-sum   " + " ".join(self.per_sum_rates()))
        for e in self.undetected_exemplars:
            lines.append(
                f"  miss #{e.trial}: input={e.input:0{h}x} "
                f"fault={e.diff_original:0{h}x}/{e.diff_redundant:0{h}x}"
            )
        return "\n".join(lines)


def _campaign(cfg: CampaignConfig, workers: int = 1) -> CampaignReport:
    cfg.validate()
    blocks = range(_nblocks(cfg))
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_block, [cfg] * len(blocks), blocks))
    else:
        parts = [_run_block(cfg, b) for b in blocks]
    tally = _Tally()
    for p in parts:
        tally = tally.merge(p)
    return CampaignReport(
        matrix=cfg.matrix.name,
        scheme=cfg.scheme.label(),
        model=cfg.model.label(),
        target=cfg.model.target.value,
        mode="exhaustive" if cfg.exhaustive else "sampled",
        seed=cfg.seed,
        trials_run=tally.trials,
        faults_injected=tally.injected,
        detected=tally.detected,
        undetected=tally.injected - tally.detected,
        per_sum_detected=tuple(tally.per_sum) if tally.per_sum is not None else None,
        undetected_exemplars=tuple(Exemplar(*e) for e in tally.exemplars),
        hex_digits=(cfg.matrix.column_bits + 3) // 4,
    )


def run_signature_campaign(cfg: CampaignConfig, workers: int = 1) -> CampaignReport:
    if cfg.scheme.kind is not SchemeType.SIGNATURE:
        raise ConfigError("run_signature_campaign needs a signature scheme")
    return _campaign(cfg, workers)


def run_redundancy_campaign(cfg: CampaignConfig, workers: int = 1) -> CampaignReport:
    if cfg.scheme.kind is SchemeType.SIGNATURE:
        raise ConfigError("run_redundancy_campaign needs a redundancy scheme")
    return _campaign(cfg, workers)


def run_campaign(cfg: CampaignConfig, workers: int = 1) -> CampaignReport:
    return _campaign(cfg, workers)


def fixed_point_codes(w: MdsMatrix, limit: int = EXHAUSTIVE_CAP) -> np.ndarray:
    space = 1 << w.column_bits
    if space > limit:
        raise CapabilityError(f"enumerating {space} columns exceeds limit {limit}")
    out = []
    for lo in range(0, space, 1 << 20):
        codes = np.arange(lo, min(space, lo + (1 << 20)), dtype=np.uint64)
        out.append(codes[w.apply_codes(codes) == codes])
    return np.concatenate(out)


def fst_fixed_points(w: MdsMatrix, limit: int = EXHAUSTIVE_CAP) -> list[StateColumn]:
    """Every column c with W(c) = c, zero column included."""
    return [StateColumn.unpack(w.field, w.n, int(c)) for c in fixed_point_codes(w, limit)]


def fixed_point_count_by_rank(w: MdsMatrix) -> int:
    """|ker(W + I)| over GF(2), from the rank of the bit-level matrix."""
    bm = w.bit_matrix() ^ BitMatrix.identity(w.column_bits)
    return 1 << (w.column_bits - bm.rank())


# -- config files ----------------------------------------------------------

def _parse_trials(v):
    if v is None or v == "exhaustive":
        return "exhaustive"
    try:
        return int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"trials must be an integer or 'exhaustive', got {v!r}") from None


def config_from_dict(d: dict) -> CampaignConfig:
    """Build a config from a mapping such as::

        {"matrix": "LED",
         "scheme": {"kind": "spatial-fst", "w": "LED"},
         "model": {"kind": "single-nibble", "target": "both-identical"},
         "trials": "exhaustive", "seed": 0}
    """
    if not isinstance(d, dict):
        raise ConfigError("campaign config must be a mapping")
    try:
        matrix = resolve_matrix(str(d["matrix"]))
        sch = d.get("scheme", {})
        if isinstance(sch, str):
            sch = {"kind": sch}
        kind = _enum(SchemeType, sch.get("kind"), "scheme")
        sig = None
        if kind is SchemeType.SIGNATURE:
            sig = SchemeKind.parse(str(sch.get("signature", "ccs")))
        w = resolve_matrix(str(sch["w"])) if sch.get("w") else None
        mod = d.get("model", {})
        if isinstance(mod, str):
            mod = {"kind": mod}
        model = FaultModel(
            kind=_enum(FaultKind, mod.get("kind"), "fault kind"),
            target=_enum(Target, mod.get("target", Target.ORIGINAL.value), "target"),
            k=int(mod.get("k", 1)),
            value=int(str(mod.get("value", 0)), 0),
            width=int(mod["width"]) if mod.get("width") is not None else None,
            position=int(mod["position"]) if mod.get("position") is not None else None,
        )
        cfg = CampaignConfig(
            matrix=matrix,
            scheme=RedundancyScheme(kind, sig, w),
            model=model,
            trials=_parse_trials(d.get("trials", "exhaustive")),
            seed=int(d.get("seed", 0)),
            inputs_per_fault=int(d["inputs_per_fault"]) if d.get("inputs_per_fault") else None,
        )
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed campaign config: {exc}") from exc
    cfg.validate()
    return cfg


def load_config(path) -> CampaignConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read campaign config {path}: {exc}") from exc
    return config_from_dict(data)
