"""Command-line pipeline: design, simulate, estimate, dca, validate, report."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import BladcaError, DomainError, NumericalError, StructuralError, __version__
from . import blaest, dca, excitation, netmodel, solver, textdoc
from .spectra import exact

log = logging.getLogger("bladca")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_NOT_ATTAINED = 0, 2, 3, 4
CONFIG_ENV = "BLADCA_CONFIG"


# --- manifest -------------------------------------------------------------------------

def sha256_path(path) -> str:
    p = Path(path)
    h = hashlib.sha256()
    files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
    for q in files:
        if p.is_dir():
            h.update(str(q.relative_to(p)).encode())
        h.update(q.read_bytes())
    return h.hexdigest()


def record_stage(manifest_path, stage, inputs, outputs, seed=None, config=None):
    """Replace the manifest entry of ``stage`` (keyed by its outputs) with fresh hashes."""
    mp = Path(manifest_path)
    doc = json.loads(mp.read_text()) if mp.exists() else {"tool": "bladca", "version": __version__, "stages": []}
    entry = {
        "stage": stage,
        "inputs": {str(p): sha256_path(p) for p in inputs if p is not None},
        "outputs": {str(p): sha256_path(p) for p in outputs},
        "seed": seed,
        "config": config or {},
    }
    doc["stages"] = [e for e in doc["stages"] if not (e["stage"] == stage and e["outputs"].keys() == entry["outputs"].keys())]
    doc["stages"].append(entry)
    mp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return entry


def _manifest_for(args, out):
    return Path(args.manifest) if args.manifest else Path(out).resolve().parent / "pipeline.json"


# --- config ---------------------------------------------------------------------------

def solver_config(args) -> solver.SolverConfig:
    base = {}
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        doc = textdoc.load(path).data
        base = doc.get("solver", doc)
    overrides = {"tol": args.tol, "max_iter": args.max_iter, "mode": args.mode, "ts": args.ts,
                 "threads": args.threads, "periods": getattr(args, "periods", None),
                 "tickler_mode": getattr(args, "tickler_mode", None)}
    base.update({k: v for k, v in overrides.items() if v is not None})
    return solver.SolverConfig.from_document(base)


def _tickler_sources(network, main, files):
    out = []
    for i, path in enumerate(files, start=1):
        doc = textdoc.load(path)
        d = doc.data
        for key in ("offset_hz", "rms"):
            if key not in d:
                raise doc.error(f"missing required key {key!r}")
        try:
            spec = excitation.design_tickler(main, float(exact(d["offset_hz"])), float(d["rms"]),
                                             int(d.get("seed", 0)), [s.spec for s in out])
        except DomainError as exc:
            raise doc.error(str(exc), "offset_hz") from None
        inject = d.get("inject", "load" if isinstance(network, netmodel.PortNetwork) else "input")
        if isinstance(network, netmodel.PortNetwork):
            if inject == "load":
                vec = solver.load_current_injection(network)
            else:
                vec = solver.wave_injection(network, int(inject), float(d.get("scale", 1.0)))
        else:
            if inject == "input":
                vec = network.input_map(np.array([0.0]))[0, :, 0]
            else:
                vec = solver.siso_injection(network, int(inject) - 1)
        out.append(solver.Source(spec, vec, f"T{i}"))
    return out


# --- commands -------------------------------------------------------------------------

def cmd_design(args):
    spec = excitation.load_spec(args.spec, args.seed)
    doc = excitation.spec_to_document(spec)
    out = Path(args.out)
    out.write_text(textdoc.dump(doc))
    record_stage(_manifest_for(args, out), "design", [args.spec], [out], spec.seed)
    print(f"{spec.kind} multisine: {spec.n_lines} excited lines, {len(spec.detection_bins)} detection lines, "
          f"rms {spec.achieved_rms():.6g}")
    return EXIT_OK


def _load_spec_any(path, seed=None):
    doc = textdoc.load(path)
    if "resolved" in doc.data:
        spec = excitation.spec_from_resolved(doc.data)
        if seed is not None:
            spec = excitation.MultisineSpec(spec.grid, spec.amplitudes, spec.rms, spec.kind, int(seed),
                                            spec.detection_group_size, spec.detection_bins, spec.band)
        return spec
    return excitation.spec_from_document(doc, seed)


def cmd_simulate(args):
    if args.M < 1:
        raise _Usage("M must be at least 1")
    network = netmodel.parse_network(args.netlist)
    main = _load_spec_any(args.spec, args.seed)
    ticklers = _tickler_sources(network, main, args.tickler or [])
    config = solver_config(args)
    seed = main.seed
    status = EXIT_OK
    if args.target_sigma is not None:
        state = {}

        def loop(m):
            rs = solver.run_experiment(network, main, ticklers, m, seed, config)
            state["records"] = rs
            return _max_sigma(rs, network)

        res = blaest.realization_budget(loop, args.target_sigma, args.batch, args.M)
        records = state["records"]
        records.meta["budget"] = {"m_used": res.m_used, "sigma": res.sigma, "attained": res.attained}
        print(f"realization budget: M = {res.m_used}, max sigma {res.sigma:.4g}, "
              f"{'attained' if res.attained else 'NOT attained'}")
        if not res.attained:
            status = EXIT_NOT_ATTAINED
    else:
        records = solver.run_experiment(network, main, ticklers, args.M, seed, config)
    records.meta["netlist"] = str(args.netlist)
    out = records.save(args.out)
    if args.columnar:
        records.export_columnar(Path(args.out) / "columnar")
    record_stage(_manifest_for(args, out), "simulate", [args.netlist, args.spec] + list(args.tickler or []),
                 [out], seed, config.to_document())
    print(f"{len(records)} records, {len(records.grid)} bins, max residual {records.residuals.max():.3g}")
    return status


def _max_sigma(records, network):
    if isinstance(network, netmodel.SisoFeedbackNetwork):
        sig = [blaest.estimate_siso(records, f"Y{n + 1}", f"U{n + 1}").sigma for n in range(network.n_blocks)]
        return np.max(sig, axis=0)
    est = blaest.estimate_siso(records, "Bt", "R")
    return est.sigma


def _estimates(records, network, cond):
    if isinstance(network, netmodel.SisoFeedbackNetwork):
        return [blaest.estimate_siso(records, f"Y{n + 1}", f"U{n + 1}") for n in range(network.n_blocks)]
    refs = list(records.sources)
    out = []
    for sub in network.subcircuits:
        labs = [f"{sub.name}.{p + 1}" for p in range(sub.ports)]
        out.append(blaest.estimate_mimo(records, refs, [f"A:{x}" for x in labs], [f"B:{x}" for x in labs], cond))
    return out


def cmd_estimate(args):
    network = netmodel.parse_network(args.netlist)
    records = solver.RecordSet.load(args.records)
    ests = _estimates(records, network, args.cond)
    doc = {"view": type(network).__name__, "estimates": [e.to_document() for e in ests]}
    out = Path(args.out)
    out.write_text(json.dumps(doc, sort_keys=True))
    record_stage(_manifest_for(args, out), "estimate", [args.records, args.netlist], [out])
    for e in ests:
        if isinstance(e, blaest.SisoBlaEstimate):
            print(f"{e.provenance['output']}/{e.provenance['input']}: max sigma {np.max(e.sigma):.4g}")
        else:
            print(f"{e.ports}: {int(e.flagged.sum())} ill-conditioned bins of {len(e.grid)}")
    return EXIT_OK


def _load_estimates(path):
    doc = json.loads(Path(path).read_text())
    kinds = {"siso": blaest.SisoBlaEstimate, "mimo": blaest.MimoBlaEstimate}
    return [kinds[d["type"]].from_document(d) for d in doc["estimates"]]


def run_dca(records, network, estimates=None, variant=dca.DEFAULT_VARIANT, cond=1e8):
    ests = estimates if estimates is not None else _estimates(records, network, cond)
    if isinstance(network, netmodel.SisoFeedbackNetwork):
        g = np.stack([e.g for e in ests], axis=-1)
        bla = np.einsum("kn,nm->knm", g, np.eye(network.n_blocks))
        cd = dca.siso_cd(records, network, bla, variant)
        cd.flagged = cd.flagged | np.any([e.flagged for e in ests], axis=0)
        t = dca.tout_siso(network, bla, cd.grid)
    else:
        s = netmodel.block_diagonal([e.s for e in ests])
        flagged = np.any([e.flagged for e in ests], axis=0)
        cd = dca.wave_cd(records, network, s, variant, flagged=flagged)
        t = dca.tout_wave(network, s, cd.grid)
    return dca.decompose(cd, t)


def _grouping(report, groups_of, args):
    gb = args.group_by or "source"
    split = tuple(s.split(":")[0] for s in args.hierarchy or ())
    if gb == "source" and not split:
        return report
    if gb == "source":
        depth = None
    elif gb in ("group", "stage"):
        depth = 1
    else:
        try:
            depth = int(gb)
        except ValueError:
            raise _Usage(f"--group-by expects source, group, stage or a depth, got {gb!r}") from None
    paths = [groups_of.get(lab, lab) for lab in report.labels]
    mapping = dca.group_paths(report.labels, paths, depth, split)
    return dca.aggregate(report, mapping)


def _groups_of(network):
    if isinstance(network, netmodel.SisoFeedbackNetwork):
        return {b.name: b.group for b in network.blocks}
    return dict(zip(network.port_labels, [f"{g}/{lab}" for g, lab in zip(network.port_groups, network.port_labels)]))


def _render(report, fmt, percent):
    return report.wide_table(percent) if fmt == "csv" else report.ranked_text(percent)


def cmd_dca(args):
    network = netmodel.parse_network(args.netlist)
    records = solver.RecordSet.load(args.records)
    ests = _load_estimates(args.estimates) if args.estimates else None
    report = run_dca(records, network, ests, args.variant, args.cond)
    report.provenance["netlist"] = str(args.netlist)
    report.provenance["groups"] = _groups_of(network)
    report = _grouping(report, report.provenance["groups"], args)
    out = Path(args.out)
    report.save(out)
    record_stage(_manifest_for(args, out), "dca", [args.records, args.netlist, args.estimates], [out])
    if args.format:
        sys.stdout.write(_render(report, args.format, args.percent))
    return EXIT_OK


def cmd_validate(args):
    network = netmodel.parse_network(args.netlist)
    if not isinstance(network, netmodel.PortNetwork):
        raise StructuralError("the small-signal test applies to port networks")
    records = solver.RecordSet.load(args.records)
    grid = records.source_grid("R")
    ss = netmodel.block_diagonal(network.small_signal(grid.frequencies))
    v = dca.smallsignal_validity(network, ss, records, args.factor)
    doc = {"bins": v.grid.bins.tolist(), "valid": v.valid.tolist(), "ratio": v.ratio.tolist(),
           "waves": list(v.names), "factor": v.factor, "fraction_valid": v.fraction_valid}
    out = Path(args.out)
    out.write_text(json.dumps(doc, sort_keys=True))
    record_stage(_manifest_for(args, out), "validate", [args.records, args.netlist], [out])
    print(f"small-signal description valid on {100 * v.fraction_valid:.1f}% of {len(v.grid)} bins")
    return EXIT_OK


def cmd_report(args):
    report = dca.ContributionReport.load(args.report)
    report = _grouping(report, report.provenance.get("groups", {}), args)
    text = _render(report, args.format or "txt", args.percent)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------

class _Usage(Exception):
    pass


def _common(p, solver_flags=False):
    p.add_argument("--manifest", help="pipeline manifest (default: pipeline.json next to the output)")
    p.add_argument("--threads", type=int, default=None)
    if solver_flags:
        p.add_argument("--config", help=f"solver config YAML (default: ${CONFIG_ENV})")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--mode", choices=("freq", "time"))
        p.add_argument("--ts", type=float)
        p.add_argument("--periods", type=int)
        p.add_argument("--tickler-mode", choices=("simultaneous", "sequential"))


def _group_flags(p):
    p.add_argument("--group-by", help="source, group (alias stage) or a group-path depth (1, 2, ...)")
    p.add_argument("--hierarchy", action="append", metavar="GROUP:split",
                   help="refine one group a level further (repeatable)")
    p.add_argument("--format", choices=("csv", "txt"))
    p.add_argument("--percent", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="bladca", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="resolve a multisine spec")
    p.add_argument("spec")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--seed", type=int)
    _common(p)
    p.set_defaults(func=cmd_design)

    for name in ("simulate", "run"):
        p = sub.add_parser(name, help="steady-state responses to M realizations")
        p.add_argument("netlist")
        p.add_argument("spec")
        p.add_argument("-M", type=int, required=True)
        p.add_argument("-o", "--out", required=True, help="record directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--tickler", action="append", help="tickler spec file (repeatable)")
        p.add_argument("--columnar", action="store_true", help="also write one text file per signal")
        p.add_argument("--target-sigma", type=float, help="grow M in batches until this BLA sigma is reached")
        p.add_argument("--batch", type=int, default=16)
        _common(p, solver_flags=True)
        p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="BLA estimates from records")
    p.add_argument("records")
    p.add_argument("netlist")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--cond", type=float, default=1e8, help="condition-number threshold for MIMO bins")
    _common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("dca", help="distortion contributions")
    p.add_argument("records")
    p.add_argument("netlist")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--estimates", help="estimate file from the estimate stage")
    p.add_argument("--variant", choices=("signal", "normalized"), default=dca.DEFAULT_VARIANT)
    p.add_argument("--cond", type=float, default=1e8)
    _group_flags(p)
    _common(p)
    p.set_defaults(func=cmd_dca)

    p = sub.add_parser("validate", help="small-signal validity test")
    p.add_argument("records")
    p.add_argument("netlist")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--factor", type=float, default=1.0)
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="render a contribution report")
    p.add_argument("report")
    p.add_argument("-o", "--out")
    _group_flags(p)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except _Usage as exc:
        ap.error(str(exc))
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (StructuralError, DomainError, BladcaError, yaml.YAMLError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
