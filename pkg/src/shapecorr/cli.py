"""Command-line front end: ``shapecorr {match,refine,evaluate,selfsym} MANIFEST``.

Exit codes: 0 success, 2 bad input, 3 numerical failure. Failures print a JSON
object with ``kind`` and ``message`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .bcicp import DIAGNOSTIC_FIELDS, RefinementState, bcicp_refine
from .config import RunManifest, load_manifest, parse_value
from .errors import InputError, ManifestError, ShapeCorrError
from .evaluation import GroundTruth, cumulative_curve, evaluate_map, write_curve_csv
from .fmap import orientation_score, pointmap_to_fmap
from .mesh import GeodesicCache, load_mesh
from .pipeline import initial_maps, initial_state
from .spectral import Shape

logger = logging.getLogger("shapecorr")


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ManifestError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


def _load_shapes(m: RunManifest, need_second: bool = True):
    k = m.solver.k
    s1 = Shape.from_mesh(load_mesh(m.mesh1), k)
    s2 = Shape.from_mesh(load_mesh(m.mesh2), k) if need_second else s1
    return s1, s2


def _descriptors(m: RunManifest, s1: Shape, s2: Shape):
    if m.descriptors != "external-csv":
        return None, None
    raw1 = io.load_descriptor_csv(m.descriptor_csv1, s1.mesh.n_vertices)
    raw2 = io.load_descriptor_csv(m.descriptor_csv2 or m.descriptor_csv1, s2.mesh.n_vertices)
    return raw1, raw2


def _ground_truth(m: RunManifest, n1: int, n2: int) -> GroundTruth | None:
    if m.gt_direct is None:
        return None
    sym = io.load_pointmap(m.gt_symmetric, n1, n2) if m.gt_symmetric is not None else None
    return GroundTruth(io.load_pointmap(m.gt_direct, n1, n2), sym)


def _evaluation(T12, T21, s1: Shape, s2: Shape, gt: GroundTruth | None) -> dict:
    geod1, geod2 = GeodesicCache(s1.mesh), GeodesicCache(s2.mesh)
    rep = evaluate_map(T12, s1.mesh, s2.mesh, gt, T21, geod1, geod2)
    out = {"T12": rep.to_dict()}
    if T21 is not None:
        out["T21"] = evaluate_map(T21, s2.mesh, s1.mesh, None, None, geod2, geod1).to_dict()
    return out, rep


def _curves(rep, path: Path) -> None:
    if rep.per_vertex_errors is not None:
        write_curve_csv(path, *cumulative_curve(rep.per_vertex_errors))


def _refine_and_write(m: RunManifest, s1: Shape, s2: Shape, state0: RefinementState, args, extra: dict) -> dict:
    out = Path(m.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    def dump(st):
        if args.dump_iterations:
            io.save_pointmap(out / f"iter{st.iteration:02d}_T12.txt", st.T12)
            io.save_pointmap(out / f"iter{st.iteration:02d}_T21.txt", st.T21)

    final = bcicp_refine(state0, s1, s2, m.solver, on_iteration=dump) if m.solver.max_iter > 0 else state0
    io.save_matrix_csv(out / "C12.csv", final.C12)
    io.save_matrix_csv(out / "C21.csv", final.C21)
    io.save_pointmap(out / "T12.txt", final.T12)
    io.save_pointmap(out / "T21.txt", final.T21)
    io.write_diagnostics_csv(out / "diagnostics.csv", final.diagnostics, DIAGNOSTIC_FIELDS)

    report = dict(extra)
    report["iterations"] = final.iteration
    report["orientation"] = m.solver.orientation
    report["orientation_score"] = {
        "initial_T12": orientation_score(state0.T12, s1.mesh, s2.mesh),
        "final_T12": orientation_score(final.T12, s1.mesh, s2.mesh),
        "final_T21": orientation_score(final.T21, s2.mesh, s1.mesh),
    }
    if final.diagnostics:
        report["final_diagnostics"] = final.diagnostics[-1]
    gt = _ground_truth(m, s1.mesh.n_vertices, s2.mesh.n_vertices)
    if gt is not None:
        geod2 = GeodesicCache(s2.mesh)
        report["initial"] = evaluate_map(state0.T12, s1.mesh, s2.mesh, gt, state0.T21, geod2=geod2).to_dict()
        report["final"] = evaluate_map(final.T12, s1.mesh, s2.mesh, gt, final.T21, geod2=geod2).to_dict()
    if getattr(args, "evaluate", False):
        report["evaluation"], rep = _evaluation(final.T12, final.T21, s1, s2, gt)
        _curves(rep, out / "curves.csv")
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def cmd_match(m: RunManifest, args) -> int:
    m.validate()
    s1, s2 = _load_shapes(m)
    raw1, raw2 = _descriptors(m, s1, s2)
    init = initial_maps(s1, s2, m.solver, raw1, raw2)
    state0 = initial_state(s1, s2, init.C12.C, init.C21.C)
    extra = {"initial_energies": {"C12": init.C12.energies, "C21": init.C21.energies}, "weights": init.C12.weights}
    _refine_and_write(m, s1, s2, state0, args, extra)
    return 0


def cmd_refine(m: RunManifest, args) -> int:
    m.validate()
    s1, s2 = _load_shapes(m)
    n1, n2 = s1.mesh.n_vertices, s2.mesh.n_vertices
    if args.T12 and args.T21:
        T12 = io.load_pointmap(args.T12, n1, n2)
        T21 = io.load_pointmap(args.T21, n2, n1)
        C12 = pointmap_to_fmap(s1.basis, s2.basis, T21)
        C21 = pointmap_to_fmap(s2.basis, s1.basis, T12)
    elif args.C12 and args.C21:
        C12, C21 = io.load_matrix_csv(args.C12), io.load_matrix_csv(args.C21)
        k1, k2 = s1.basis.k, s2.basis.k
        if C12.shape != (k2, k1) or C21.shape != (k1, k2):
            raise InputError(f"functional maps must be {k2}x{k1} and {k1}x{k2}, got {C12.shape} and {C21.shape}")
    else:
        raise InputError("refine needs --T12 and --T21, or --C12 and --C21")
    _refine_and_write(m, s1, s2, initial_state(s1, s2, C12, C21), args, {"source": "refine"})
    return 0


def cmd_evaluate(m: RunManifest, args) -> int:
    m.validate()
    s1, s2 = _load_shapes(m)
    n1, n2 = s1.mesh.n_vertices, s2.mesh.n_vertices
    T12 = io.load_pointmap(args.T12, n1, n2)
    T21 = io.load_pointmap(args.T21, n2, n1) if args.T21 else None
    gt = _ground_truth(m, n1, n2)
    out = Path(m.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report, rep = _evaluation(T12, T21, s1, s2, gt)
    _curves(rep, out / "curves.csv")
    (out / "report.json").write_text(json.dumps({"evaluation": report}, indent=2, sort_keys=True))
    return 0


def cmd_selfsym(m: RunManifest, args) -> int:
    m.validate(need_second=False)
    m.mesh2 = m.mesh1
    m.descriptor_csv2 = m.descriptor_csv1
    m.solver = m.solver.replace(orientation="reverse")
    s1, _ = _load_shapes(m, need_second=False)
    raw1, _ = _descriptors(m, s1, s1)
    init = initial_maps(s1, s1, m.solver, raw1, raw1)
    state0 = initial_state(s1, s1, init.C12.C, init.C21.C)
    final = bcicp_refine(state0, s1, s1, m.solver) if m.solver.max_iter > 0 else state0
    out = Path(m.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_pointmap(out / "T11.txt", final.T12)
    io.write_diagnostics_csv(out / "diagnostics.csv", final.diagnostics, DIAGNOSTIC_FIELDS)
    n = s1.mesh.n_vertices
    report = {
        "identity_fraction": float(np.mean(final.T12 == np.arange(n))),
        "orientation_score": orientation_score(final.T12, s1.mesh, s1.mesh),
        "iterations": final.iteration,
    }
    gt = _ground_truth(m, n, n)
    if gt is not None:
        report["final"] = evaluate_map(final.T12, s1.mesh, s1.mesh, gt, final.T21).to_dict()
        report["exact_fraction"] = float(np.mean(final.T12 == gt.direct))
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return 0


COMMANDS = {"match": cmd_match, "refine": cmd_refine, "evaluate": cmd_evaluate, "selfsym": cmd_selfsym}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapecorr", description="Orientation-aware functional-map correspondence with bijective refinement.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("manifest", help="TOML manifest")
        sp.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE", help="override a manifest or solver key")
        sp.add_argument("-o", "--output", help="output directory (overrides the manifest)")

    sp = sub.add_parser("match", help="compute maps between mesh1 and mesh2")
    common(sp)
    sp.add_argument("--evaluate", action="store_true", help="also write the evaluation report and curves.csv")
    sp.add_argument("--dump-iterations", action="store_true", help="write the point maps after every iteration")

    sp = sub.add_parser("refine", help="refine given maps")
    common(sp)
    sp.add_argument("--T12")
    sp.add_argument("--T21")
    sp.add_argument("--C12")
    sp.add_argument("--C21")
    sp.add_argument("--evaluate", action="store_true")
    sp.add_argument("--dump-iterations", action="store_true")

    sp = sub.add_parser("evaluate", help="score point maps against ground truth")
    common(sp)
    sp.add_argument("--T12", required=True)
    sp.add_argument("--T21")

    sp = sub.add_parser("selfsym", help="orientation-reversing self map of mesh1")
    common(sp)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"kind": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _overrides(args.overrides)
        if args.command == "selfsym" and "orientation" in overrides:
            parser.error("selfsym always runs in reverse mode; orientation cannot be overridden")
        if args.output:
            overrides["output_dir"] = args.output
        manifest = load_manifest(args.manifest, overrides)
        if args.command == "selfsym" and manifest.solver.orientation not in ("reverse", "preserve"):
            parser.error("selfsym always runs in reverse mode; orientation cannot be overridden")
        return COMMANDS[args.command](manifest, args)
    except ShapeCorrError as exc:
        return _fail(exc.kind, str(exc), exc.exit_code)
    except (TypeError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)


if __name__ == "__main__":
    sys.exit(main())
