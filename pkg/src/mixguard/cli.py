"""Command-line front end.

Exit status: 0 success, 1 verification failure, 2 usage or capability error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import faultsim as fs
from .gates import compare_published, gate_report, render_table
from .mds import CATALOG_NAMES, EXHAUSTIVE_LIMIT, CapabilityError, UnknownMatrixError, classify, resolve_matrix
from .signature import SchemeKind, derive_scheme, verify_identity

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _matrices(selector: str):
    if selector.lower() == "all":
        return [resolve_matrix(n) for n in CATALOG_NAMES]
    try:
        return [resolve_matrix(selector)]
    except UnknownMatrixError as exc:
        raise UsageError(exc.args[0]) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit_records(records, out):
    for r in records:
        out.write(json.dumps(r) + "\n")


def cmd_matrices(args, out) -> int:
    reports = [classify(m, args.strategy) for m in _matrices(args.matrix)]
    if args.format == "records":
        _emit_records([r.record() for r in reports], out)
    else:
        for r in reports:
            out.write(r.render() + "\n")
    return EXIT_OK


def cmd_gates(args, out) -> int:
    reports = [gate_report(m) for m in _matrices(args.matrix)]
    comparisons = [compare_published(r) for r in reports]
    if args.format == "records":
        recs = []
        for r, c in zip(reports, comparisons):
            rec = r.record()
            rec["published_match"] = c.matches
            recs.append(rec)
        _emit_records(recs, out)
        for c in comparisons:
            if c.matches is False:
                sys.stderr.write(f"warning: {c.message()}\n")
    else:
        out.write(render_table(reports) + "\n")
        for c in comparisons:
            out.write(c.message() + "\n")
    return EXIT_OK


def cmd_signatures(args, out) -> int:
    (m,) = _matrices(args.matrix)
    scheme = derive_scheme(m, SchemeKind.parse(args.kind))
    if args.exhaustive:
        space = 1 << m.column_bits
        if space > EXHAUSTIVE_LIMIT:
            raise CapabilityError(
                f"exhaustive check of {m.name} needs {space} columns; use --sample N"
            )
        codes = np.arange(space, dtype=np.uint64)
    else:
        rng = np.random.default_rng([args.seed, 0])
        codes = rng.integers(0, 1 << m.column_bits, size=args.sample, dtype=np.uint64)
    bad = verify_identity(scheme, codes)
    total = len(codes)
    ok = total - bad
    if args.format == "records":
        _emit_records(
            [{"matrix": m.name, "kind": scheme.kind.value,
              "mode": "exhaustive" if args.exhaustive else "sampled",
              "checked": total, "ok": ok, "mismatches": bad}],
            out,
        )
    else:
        status = "ok" if bad == 0 else f"ok, {bad} MISMATCHES"
        out.write(f"{m.name} {scheme.kind.value}: {ok}/{total} {status}\n")
    return EXIT_OK if bad == 0 else EXIT_FAIL


def _inline_config(args) -> fs.CampaignConfig:
    if args.matrix is None or args.scheme is None or args.fault is None:
        raise UsageError("faultsim needs a config file or --matrix, --scheme and --fault")
    d = {
        "matrix": args.matrix,
        "scheme": {"kind": args.scheme, "signature": args.signature, "w": args.w},
        "model": {
            "kind": args.fault,
            "target": args.target,
            "k": args.k,
            "value": args.stuck_value,
            "width": args.width,
            "position": args.position,
        },
        "trials": "exhaustive" if args.trials is None else args.trials,
        "seed": args.seed,
        "inputs_per_fault": args.inputs_per_fault,
    }
    return fs.config_from_dict(d)


def cmd_faultsim(args, out) -> int:
    try:
        cfg = fs.load_config(args.config) if args.config else _inline_config(args)
        if args.config and args.seed_given:
            cfg = dataclasses.replace(cfg, seed=args.seed)
            cfg.validate()
    except fs.ConfigError as exc:
        raise UsageError(str(exc)) from None
    report = fs.run_campaign(cfg, workers=args.workers)
    if args.format == "records":
        out.write(report.to_json() + "\n")
    else:
        out.write(report.render() + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixguard", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--format", choices=("text", "records"), default="text")
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")

    sp = sub.add_parser("matrices", help="branch number and MDS/involutory classification")
    sp.add_argument("matrix", help="catalog name, matrix file, or 'all'")
    sp.add_argument("--strategy", choices=("auto", "exhaustive", "restricted"), default="auto")
    common(sp)
    sp.set_defaults(func=cmd_matrices)

    sp = sub.add_parser("gates", help="XOR gate counts for MixColumn and signature predictors")
    sp.add_argument("matrix", nargs="?", default="all")
    common(sp)
    sp.set_defaults(func=cmd_gates)

    sp = sub.add_parser("signatures", help="check predicted = actual signatures on fault-free MixColumn")
    sp.add_argument("matrix")
    sp.add_argument("kind", choices=("ccs", "interleaved"))
    mode = sp.add_mutually_exclusive_group(required=True)
    mode.add_argument("--exhaustive", action="store_true")
    mode.add_argument("--sample", type=int, metavar="N")
    common(sp)
    sp.set_defaults(func=cmd_signatures)

    sp = sub.add_parser("faultsim", help="run a fault-injection campaign")
    sp.add_argument("config", nargs="?", help="JSON campaign config")
    sp.add_argument("--matrix")
    sp.add_argument("--scheme", choices=[s.value for s in fs.SchemeType])
    sp.add_argument("--signature", choices=("ccs", "interleaved"), default="ccs")
    sp.add_argument("--w", help="FST mapping matrix (default: the campaign matrix)")
    sp.add_argument("--fault", choices=[k.value for k in fs.FaultKind])
    sp.add_argument("--target", choices=[t.value for t in fs.Target], default=fs.Target.ORIGINAL.value)
    sp.add_argument("--k", type=int, default=1, help="bits flipped by multi-bit faults")
    sp.add_argument("--stuck-value", default="0", help="biased-stuck forced value")
    sp.add_argument("--width", type=int, help="biased-stuck width in bits")
    sp.add_argument("--position", type=int, help="fix the faulted slot")
    sp.add_argument("--trials", type=int, help="sampled trial count (default: exhaustive)")
    sp.add_argument("--inputs-per-fault", type=int)
    sp.add_argument("--workers", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_faultsim)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args, out)
    except (UsageError, CapabilityError) as exc:
        sys.stderr.write(f"mixguard: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
