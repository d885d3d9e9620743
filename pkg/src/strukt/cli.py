"""Command-line front end.

Exit codes::

    0  success
    1  validation or conformance failure
    2  usage error (bad flags, malformed criterion or perturbation)
    3  I/O error (unreadable input, unwritable output, corrupt container)
    4  internal error

With ``--json`` standard output carries a single JSON document and nothing
else; human-readable text is printed otherwise. Diagnostics go to stderr.
"""

import argparse
import json
import sys
import traceback
from pathlib import Path

from . import __version__
from ._canon import canonical_json
from .criterion import criterion_hash, load_criterion
from .dobject import DOError, export_do, verify_do
from .errors import (CompatibilityError, DegenerateGraphError, FormatError, IntegrityError,
                     LineageError, NoObjectiveError, SpecError, StruktError)
from .extract import as_partition, extract
from .field import import_pgm, load_field, save_field
from .perturb import load_perturbation
from .products import Hierarchy, coarsen, load_product, product_hash, save_product
from .semantics import MappingError, apply_crosswalk, apply_mapping, load_document, save_document
from .validate import scale_coherence, stability_envelope

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class InvalidError(Exception):
    """Validation or conformance failure detected by a command."""


def _emit(args, doc, text):
    if args.json:
        sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    else:
        print(text)


def _write(path, data):
    path = Path(path)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


def _check_out_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror or exc}") from None
    return path


def cmd_import_pgm(args):
    f = import_pgm(args.pgm)
    save_field(f, args.out)
    _emit(args, {"field_hash": f.field_hash, "out": str(args.out)},
          f"wrote {args.out} ({f.height}x{f.width}, {f.channels} channel) {f.field_hash}")
    return EXIT_OK


def cmd_extract(args):
    field = load_field(args.field)
    cspec = load_criterion(args.criterion)
    result = extract(field, cspec)
    product = result.product
    if args.level is not None:
        if not isinstance(product, Hierarchy):
            raise UsageError("--level only applies to hierarchical criteria")
        product = coarsen(product, args.level)
    out = Path(args.out)
    written = save_product(product, out)
    sidecar = {"product_hash": product_hash(product),
               "objective": result.objective,
               "criterion_digest": result.criterion_digest,
               "field_hash": field.field_hash,
               "implementation_id": result.implementation_id,
               "family": result.family,
               "level": args.level,
               "files": [str(p) for p in written]}
    side_path = out.with_name(out.name + ".meta.json")
    _write(side_path, canonical_json(sidecar))
    _emit(args, sidecar, f"wrote {out} ({result.family}) {sidecar['product_hash']}\n"
                         f"objective: {result.objective}")
    return EXIT_OK


def _replicates(n):
    if n < 1:
        raise UsageError("--replicates must be at least 1")
    return n


def cmd_validate(args):
    n = _replicates(args.replicates)
    field = load_field(args.field)
    cspec = load_criterion(args.criterion)
    pspec = load_perturbation(args.perturbation)
    env = stability_envelope(field, cspec, pspec, n, level=args.level)
    out = _check_out_dir(args.out)
    _write(out / "envelope.json", env.to_json())
    _write(out / "envelope.csv", env.to_csv().encode("utf-8"))
    doc = env.to_dict()
    s = env.summary
    _emit(args, doc, f"{n} replicates of {pspec.family}: ARI mean {s['ari']['mean']:.6f} "
                     f"(min {s['ari']['min']:.6f}), VI mean {s['vi_nats']['mean']:.6f} nats, "
                     f"boundary F mean {s['boundary_f']['mean']:.6f}")
    return EXIT_OK


def _load_partition(path, level):
    product = load_product(path)
    try:
        return as_partition(product, level)
    except CompatibilityError as exc:
        raise InvalidError(str(exc)) from None


def cmd_map(args):
    field = load_field(args.field)
    part = _load_partition(args.product, args.level)
    mapping = load_document("mapping", args.mapping)
    ontology = load_document("ontology", args.ontology)
    lp = apply_mapping(field, part, mapping, ontology)
    save_document(lp, args.out)
    _emit(args, lp.to_dict(), f"wrote {args.out}: {len(lp.terms)} regions labelled in "
                              f"{ontology.ontology_id}@{ontology.version}, product {lp.product_hash}")
    return EXIT_OK


def cmd_crosswalk(args):
    lp = load_document("labeled", args.labeled)
    cw = load_document("crosswalk", args.crosswalk)
    if args.source_ontology and args.target_ontology:
        problems = cw.problems(load_document("ontology", args.source_ontology),
                               load_document("ontology", args.target_ontology))
        if problems:
            raise MappingError("; ".join(problems))
    out = apply_crosswalk(lp, cw)
    save_document(out, args.out)
    _emit(args, out.to_dict(), f"wrote {args.out}: {len(out.terms)} regions now in "
                               f"{out.ontology_ref[0]}@{out.ontology_ref[1]}")
    return EXIT_OK


def _parse_factors(text):
    try:
        factors = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--scale-factors must be comma-separated integers, got {text!r}") from None
    if not factors or any(f < 1 for f in factors):
        raise UsageError("--scale-factors must list positive integers")
    return factors


def cmd_do_export(args):
    field = load_field(args.field)
    cspec = load_criterion(args.criterion)
    stability, envelope = {}, None
    if args.perturbation:
        n = _replicates(args.replicates)
        pspec = load_perturbation(args.perturbation)
        envelope = stability_envelope(field, cspec, pspec, n, level=args.level)
        stability["perturbations"] = [envelope.perturbation_digest]
    if args.scale_factors:
        factors = _parse_factors(args.scale_factors)
        stability["scale_factors"] = factors
        stability["scale_ari"] = scale_coherence(field, cspec, factors, args.level)
    if not stability:
        raise UsageError("declare --perturbation or --scale-factors; a digital object must "
                         "state what its stability was tested against")
    result = extract(field, cspec)
    out = _check_out_dir(args.out)
    do_id = export_do(result, cspec, field, out, stability=stability, envelope=envelope,
                      command_line=args.argv, parents=args.parent or [], version=args.version,
                      level=args.level)
    doc = {"do_id": do_id, "path": str(out / f"{do_id}.do.json"),
           "criterion_digest": criterion_hash(cspec)}
    _emit(args, doc, f"exported {doc['path']}")
    return EXIT_OK


def cmd_do_verify(args):
    report = verify_do(args.path)
    lines = [f"{'ok  ' if c.ok else 'FAIL'} {c.name}" + (f": {c.detail}" if c.detail else "")
             for c in report.checks]
    _emit(args, report.to_dict(), "\n".join(lines))
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_bench_fig2(args):
    from .bench import run_fig2

    out = _check_out_dir(args.out)
    # The output location is left out of provenance so reruns elsewhere match.
    report = run_fig2(args.seed, out, command_line=["strukt", "bench", "fig2", "--seed",
                                                    str(args.seed)])
    rows = [f"{r['perturbation']:<16} structural ARI {r['structural_ari']:.4f}   "
            f"baseline agreement {r['baseline_agreement']:.4f}" for r in report.rows]
    _emit(args, report.to_dict(), "\n".join(rows) + f"\nwrote {out}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="strukt", description="Criteria-first structure extraction.")
    ap.add_argument("--version", action="version", version=f"strukt {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="Print one JSON document on stdout.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import-pgm", parents=[common], help="Convert a PGM image to a field file.")
    p.add_argument("--pgm", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_pgm)

    p = sub.add_parser("extract", parents=[common], help="Run one criterion on a field.")
    p.add_argument("--field", required=True)
    p.add_argument("--criterion", required=True)
    p.add_argument("--out", required=True, help="Product file; a .meta.json sidecar is added.")
    p.add_argument("--level", type=int, default=None, help="Hierarchy level to write.")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("validate", parents=[common], help="Compute a stability envelope.")
    p.add_argument("--field", required=True)
    p.add_argument("--criterion", required=True)
    p.add_argument("--perturbation", required=True)
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--out", required=True, help="Directory for envelope.json and envelope.csv.")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("map", parents=[common], help="Label a product's regions in an ontology.")
    p.add_argument("--product", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--mapping", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("crosswalk", parents=[common], help="Translate labels between ontologies.")
    p.add_argument("--labeled", required=True)
    p.add_argument("--crosswalk", required=True)
    p.add_argument("--source-ontology")
    p.add_argument("--target-ontology")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crosswalk)

    p = sub.add_parser("do", help="Export or verify digital objects.")
    dsub = p.add_subparsers(dest="do_command", required=True)
    q = dsub.add_parser("export", parents=[common])
    q.add_argument("--field", required=True)
    q.add_argument("--criterion", required=True)
    q.add_argument("--perturbation")
    q.add_argument("--replicates", type=int, default=5)
    q.add_argument("--scale-factors", help="Comma-separated resampling factors, e.g. 1,2,4.")
    q.add_argument("--level", type=int, default=None)
    q.add_argument("--parent", action="append", help="Parent DO id (repeatable).")
    q.add_argument("--version", type=int, default=1, dest="version")
    q.add_argument("--out", required=True, help="Output directory.")
    q.set_defaults(func=cmd_do_export)
    q = dsub.add_parser("verify", parents=[common])
    q.add_argument("path")
    q.set_defaults(func=cmd_do_verify)

    p = sub.add_parser("bench", help="Reproducible experiments.")
    bsub = p.add_subparsers(dest="bench_command", required=True)
    q = bsub.add_parser("fig2", parents=[common],
                        help="Structural stability versus a nearest-centroid baseline under shift.")
    q.add_argument("--seed", type=int, default=42)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_bench_fig2)
    return ap


def _fail(code, message, extra=()):
    print(f"strukt: {message}", file=sys.stderr)
    for line in extra:
        print(f"  - {line}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = ["strukt", *argv]
    try:
        return args.func(args)
    except SpecError as exc:
        return _fail(EXIT_USAGE, str(exc).split(":")[0], exc.problems or [str(exc)])
    except UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as exc:
        return _fail(EXIT_IO, str(exc))
    except (FormatError, IntegrityError) as exc:
        return _fail(EXIT_IO, f"{type(exc).__name__}: {exc}")
    except (InvalidError, MappingError, CompatibilityError, DegenerateGraphError,
            NoObjectiveError, LineageError, DOError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    except StruktError as exc:
        return _fail(EXIT_INVALID, f"{type(exc).__name__}: {exc}")
    except Exception:
        traceback.print_exc()
        return _fail(EXIT_INTERNAL, "internal error")


if __name__ == "__main__":
    sys.exit(main())
