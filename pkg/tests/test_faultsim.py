import json
import math
from fractions import Fraction

import numpy as np
import pytest

from mixguard.gf import GF16
from mixguard.mds import CapabilityError, MdsMatrix, StateColumn, catalog_get, identity_matrix
from mixguard.signature import SchemeKind
from mixguard import faultsim as fs
from mixguard.faultsim import (
    CampaignConfig,
    ConfigError,
    FaultKind,
    FaultModel,
    RedundancyScheme,
    SchemeType,
    Target,
)
from oracles import gf2_rank, mat_vec


def _cfg(matrix, scheme, kind, target=Target.ORIGINAL, **kw):
    model_kw = {k: kw.pop(k) for k in ("k", "value", "width", "position") if k in kw}
    sig = kw.pop("signature", None)
    w = kw.pop("w", None)
    return CampaignConfig(
        matrix=catalog_get(matrix) if isinstance(matrix, str) else matrix,
        scheme=RedundancyScheme(SchemeType(scheme), sig, w),
        model=FaultModel(FaultKind(kind), target, **model_kw),
        **kw,
    )


# -- single-shot injection --------------------------------------------------

def test_single_bit_on_zero_column_sets_one_bit():
    zero = StateColumn.of(GF16, [0, 0, 0, 0])
    for i in range(50):
        out, desc = fs.apply_fault(zero, FaultModel(FaultKind.SINGLE_BIT), fs.trial_rng(3, i))
        assert bin(out.pack()).count("1") == 1
        assert desc.diff == out.pack()


def test_apply_fault_is_deterministic_per_trial():
    col = StateColumn.of(GF16, [1, 2, 3, 4])
    model = FaultModel(FaultKind.SINGLE_NIBBLE)
    a = fs.apply_fault(col, model, fs.trial_rng(9, 17))
    b = fs.apply_fault(col, model, fs.trial_rng(9, 17))
    assert a == b


def test_stuck_nibble_example():
    col = StateColumn.of(GF16, [0x6, 0, 0, 0])
    model = FaultModel(FaultKind.BIASED_STUCK, value=0xF, width=4, position=0)
    out, desc = fs.apply_fault(col, model, fs.trial_rng(0, 0))
    assert out.values()[0] == 0xF
    assert desc.diff == 0x9
    assert desc.clear == 0xF and desc.set == 0xF and desc.flip == 0


def test_stuck_partial_width():
    col = StateColumn.of(GF16, [0, 0xA, 0, 0])
    model = FaultModel(FaultKind.BIASED_STUCK, value=0b01, width=2, position=1)
    out, desc = fs.apply_fault(col, model, fs.trial_rng(0, 0))
    assert out.values() == (0, 0b1001, 0, 0)
    assert desc.diff == 0b0011 << 4


def test_identical_target_gives_identical_descriptors():
    model = FaultModel(FaultKind.SINGLE_NIBBLE, Target.IDENTICAL)
    x = StateColumn.of(GF16, [3, 1, 4, 1])
    for i in range(20):
        (_, d1), (_, d2) = fs.apply_fault_pair(x, x, model, fs.trial_rng(1, i))
        assert d1 == d2


def test_pair_targets():
    x = StateColumn.of(GF16, [0, 0, 0, 0])
    (a, da), (b, db) = fs.apply_fault_pair(x, x, FaultModel(FaultKind.SINGLE_BIT, Target.ORIGINAL), fs.trial_rng(0, 1))
    assert da is not None and db is None and b == x
    (a, da), (b, db) = fs.apply_fault_pair(x, x, FaultModel(FaultKind.SINGLE_BIT, Target.REDUNDANT), fs.trial_rng(0, 1))
    assert da is None and db is not None and a == x


def test_model_validation():
    with pytest.raises(ConfigError):
        FaultModel(FaultKind.BIASED_STUCK, value=0x1F).validate(4, 4)
    with pytest.raises(ConfigError):
        FaultModel(FaultKind.BIASED_STUCK, width=5).validate(4, 4)
    with pytest.raises(ConfigError):
        FaultModel(FaultKind.MULTI_BIT, k=0).validate(4, 4)
    with pytest.raises(ConfigError):
        FaultModel(FaultKind.SINGLE_NIBBLE, position=4).validate(4, 4)


def test_fault_space_sizes():
    assert FaultModel(FaultKind.SINGLE_BIT).space_size(4, 4) == 16
    assert FaultModel(FaultKind.SINGLE_NIBBLE).space_size(4, 4) == 60
    assert FaultModel(FaultKind.SINGLE_BYTE).space_size(4, 8) == 4 * 255
    assert FaultModel(FaultKind.MULTI_BIT, k=3).space_size(4, 4) == math.comb(16, 3)
    for kind in FaultKind:
        m = FaultModel(kind, k=2)
        b = m.enumerate(4, 4)
        acts = set(zip(b.clear.tolist(), b.set.tolist(), b.flip.tolist()))
        assert len(acts) == m.space_size(4, 4)


def test_sampled_draws_stay_in_enumerated_space():
    for kind in FaultKind:
        m = FaultModel(kind, k=3)
        b = m.enumerate(4, 4)
        space = set(zip(b.clear.tolist(), b.set.tolist(), b.flip.tolist()))
        d = m.draw(np.random.default_rng(0), 2000, 4, 4)
        assert set(zip(d.clear.tolist(), d.set.tolist(), d.flip.tolist())) <= space


# -- campaigns ----------------------------------------------------------------

@pytest.mark.parametrize("name", ["LED", "Midori64-MC"])
@pytest.mark.parametrize("sig", list(SchemeKind))
def test_signature_single_bit_exhaustive(name, sig):
    r = fs.run_signature_campaign(_cfg(name, "signature", "single-bit", signature=sig))
    assert r.trials_run == 16 * 65536
    assert r.faults_injected == r.trials_run
    assert r.detection_rate == 1


def test_signature_single_bit_sampled_gf256(klein):
    r = fs.run_signature_campaign(_cfg(klein, "signature", "single-bit", signature=SchemeKind.CCS, trials=50_000))
    assert r.detection_rate == 1
    # single-byte on a byte-wide register is still one nonzero element
    r = fs.run_signature_campaign(_cfg(klein, "signature", "single-byte", signature=SchemeKind.CCS, trials=50_000))
    assert r.detection_rate == 1


def test_rows_0_and_2_cancel_per_sum():
    # bit x^1 of rows 0 and 2 at once
    mask = (1 << 1) | (1 << 9)
    for sig in SchemeKind:
        cfg = _cfg("LED", "signature", "multi-bit", k=2, signature=sig)
        for o in fs.iter_outcomes(cfg):
            sel = (o.diff_original == mask)
            if sel.any():
                assert not o.detected[sel].any()
                if o.per_sum is not None:
                    assert not o.per_sum[:, sel].any()


def test_double_bit_per_sum_rates():
    # within one sum, exactly the same-bit pairs inside the even or odd rows escape it
    r = fs.run_signature_campaign(_cfg("LED", "signature", "multi-bit", k=2, signature=SchemeKind.INTERLEAVED,
                                       inputs_per_fault=64))
    assert r.per_sum_detected is not None and len(r.per_sum_detected) == 2
    assert r.detected + r.undetected == r.faults_injected
    # undetected faults: same bit in rows (0,2) or (1,3): 4 bits x 2 pairs
    assert r.undetected == 8 * 64


def test_naive_identical_never_detected():
    for kind in ("single-bit", "single-nibble"):
        r = fs.run_redundancy_campaign(_cfg("LED", "spatial-naive", kind, Target.IDENTICAL))
        assert r.faults_injected > 0 and r.detection_rate == 0
        assert len(r.undetected_exemplars) == fs.EXEMPLAR_LIMIT


@pytest.mark.parametrize("scheme", ["spatial-naive", "time-recompute", "spatial-fst"])
@pytest.mark.parametrize("target", [Target.ORIGINAL, Target.REDUNDANT])
def test_single_register_fault_always_detected(scheme, target):
    r = fs.run_redundancy_campaign(_cfg("LED", scheme, "single-bit", target))
    assert r.detection_rate == 1


def test_fst_led_single_nibble_identical():
    r = fs.run_redundancy_campaign(_cfg("LED", "spatial-fst", "single-nibble", Target.IDENTICAL))
    fixed = {int(c) for c in fs.fixed_point_codes(catalog_get("LED"))} - {0}
    nibbles = {v << (4 * p) for p in range(4) for v in range(1, 16)}
    assert len(fixed & nibbles) == 0
    assert r.detection_rate == 1 - Fraction(len(fixed & nibbles), 60)
    assert r.detection_rate == 1


def _all_fault_undetected_set(w, matrix="LED"):
    missed = set()
    total = 0
    for k in range(1, 17):
        cfg = _cfg(matrix, "spatial-fst", "multi-bit", Target.IDENTICAL, k=k, w=w, inputs_per_fault=1)
        for o in fs.iter_outcomes(cfg):
            total += int(o.effective.sum())
            missed |= set(o.diff_original[o.undetected].tolist())
    assert total == (1 << 16) - 1
    return missed


@pytest.mark.parametrize("wname", ["LED", "Midori64-MC"])
def test_fst_undetected_set_equals_fixed_points(wname):
    w = catalog_get(wname)
    missed = _all_fault_undetected_set(w)
    fixed = {int(c) for c in fs.fixed_point_codes(w)} - {0}
    assert missed == fixed
    assert len(missed) == {"LED": 0, "Midori64-MC": 4095}[wname]


def test_fixed_points_rank_and_enumeration_agree():
    for name in ("LED", "Midori64-MC"):
        w = catalog_get(name)
        assert len(fs.fixed_point_codes(w)) == fs.fixed_point_count_by_rank(w)
    # oracle rank of (M + I) for LED, built column by column from plain-Python products
    rows = catalog_get("LED").int_rows()
    cols = []
    for b in range(16):
        e = [(1 << b) >> (4 * i) & 0xF for i in range(4)]
        img = mat_vec(rows, e, 0b10011)
        code = sum(v << (4 * i) for i, v in enumerate(img))
        cols.append(code ^ (1 << b))
    assert fs.fixed_point_count_by_rank(catalog_get("LED")) == 1 << (16 - gf2_rank(cols))


def test_fixed_points_identity_and_zero():
    pts = fs.fst_fixed_points(identity_matrix())
    assert len(pts) == 1 << 16
    assert fs.fst_fixed_points(catalog_get("LED"))[0].pack() == 0


def test_fixed_points_gf256_capability(klein):
    with pytest.raises(CapabilityError):
        fs.fixed_point_codes(klein)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_independent_at_least_identical(k):
    rates = {}
    for t in (Target.IDENTICAL, Target.INDEPENDENT):
        cfg = _cfg("Midori64-MC", "spatial-fst", "multi-bit", t, k=k, inputs_per_fault=1)
        rates[t] = fs.run_redundancy_campaign(cfg).detection_rate
    assert rates[Target.INDEPENDENT] >= rates[Target.IDENTICAL]


def test_time_recompute_independent_single_bit():
    n = 400_000
    r = fs.run_redundancy_campaign(_cfg("LED", "time-recompute", "single-bit", Target.INDEPENDENT, trials=n, seed=5))
    p = 1 - 1 / 16
    sigma = math.sqrt(p * (1 - p) / r.faults_injected)
    assert r.faults_injected == n
    assert abs(float(r.detection_rate) - p) < 3 * sigma


def test_time_recompute_exhaustive_independent_exact():
    r = fs.run_redundancy_campaign(_cfg("LED", "time-recompute", "single-bit", Target.INDEPENDENT, inputs_per_fault=8))
    assert r.undetected == 16 * 8
    assert r.detection_rate == Fraction(15, 16)


def test_stuck_faults_can_be_ineffective():
    # forcing a nibble to 0 does nothing when it is already 0
    r = fs.run_redundancy_campaign(_cfg("LED", "spatial-naive", "biased-stuck", Target.ORIGINAL, value=0))
    assert r.trials_run == 4 * 65536
    assert r.faults_injected == 4 * (65536 - 4096)
    assert r.detection_rate == 1


def test_report_invariants_and_json():
    r = fs.run_campaign(_cfg("Midori64-MC", "spatial-fst", "multi-bit", Target.IDENTICAL, k=4, trials=30_000, seed=3))
    assert r.detected + r.undetected == r.faults_injected
    rec = json.loads(r.to_json())
    assert rec["detection_rate"] == f"{float(r.detection_rate):.6f}"
    assert len(rec["undetected_exemplars"]) <= 10
    for e in rec["undetected_exemplars"]:
        assert len(e["input"]) == 4
        assert e["fault_original"] == e["fault_redundant"]


def test_determinism_across_workers():
    cfg = _cfg("LED", "spatial-fst", "multi-bit", Target.INDEPENDENT, k=2, trials=300_000, seed=42)
    a = fs.run_campaign(cfg, workers=1).to_json()
    b = fs.run_campaign(cfg, workers=2).to_json()
    c = fs.run_campaign(cfg, workers=1).to_json()
    assert a == b == c


def test_different_seeds_differ():
    # Midori fixed points have even bit weight, so k=4 faults can collide
    base = dict(trials=100_000, k=4)
    a = fs.run_campaign(_cfg("Midori64-MC", "spatial-fst", "multi-bit", Target.IDENTICAL, seed=1, **base))
    b = fs.run_campaign(_cfg("Midori64-MC", "spatial-fst", "multi-bit", Target.IDENTICAL, seed=2, **base))
    assert a.undetected_exemplars != b.undetected_exemplars


def test_config_errors():
    with pytest.raises(ConfigError):
        _cfg("LED", "signature", "single-bit", Target.IDENTICAL, signature=SchemeKind.CCS).validate()
    with pytest.raises(ConfigError):
        _cfg("LED", "signature", "single-bit").validate()
    singular = MdsMatrix.from_ints("sing", GF16, [[1, 1, 0, 0]] * 4)
    with pytest.raises(ConfigError):
        _cfg("LED", "spatial-fst", "single-bit", w=singular).validate()
    with pytest.raises(ConfigError):
        _cfg("LED", "spatial-fst", "single-bit", w=catalog_get("KLEIN")).validate()
    with pytest.raises(ConfigError):
        _cfg("LED", "spatial-naive", "single-bit", trials=0).validate()


def test_exhaustive_cap():
    with pytest.raises(CapabilityError):
        _cfg("KLEIN", "spatial-naive", "single-bit").validate()
    with pytest.raises(CapabilityError):
        _cfg("LED", "spatial-naive", "single-nibble", Target.INDEPENDENT).validate()


def test_config_from_dict_and_file(tmp_path):
    d = {"matrix": "LED", "scheme": {"kind": "spatial-fst", "w": "Midori64-MC"},
         "model": {"kind": "biased-stuck", "target": "both-identical", "value": "0xF", "width": 4},
         "trials": 1000, "seed": 7}
    cfg = fs.config_from_dict(d)
    assert cfg.mapping.name == "Midori64-MC" and cfg.model.value == 0xF and cfg.seed == 7
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    assert fs.load_config(p) == cfg
    with pytest.raises(ConfigError):
        fs.config_from_dict({"matrix": "LED", "scheme": "bogus", "model": "single-bit"})
    with pytest.raises(ConfigError):
        fs.config_from_dict({"scheme": "spatial-naive", "model": "single-bit"})
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        fs.load_config(p)
