"""Command-line interface.

Commands::

    theta A B [--mask M]            Theta_Y between two field files
    dbounds A B [--budget N]        lower and upper bounds on d
    classify MANIFEST [LIMIT]       convergence report for a sequence
    example1 PROBE --k 2,4,8        torus probe table (CSV)
    make-field KIND --res R         write a field file
    make-sequence KIND --k ...      write term files and a manifest

Exit codes: 0 success, 2 input error, 3 optimizer non-convergence within
``--budget`` iterations per refinement level.

CSV columns: ``example1`` writes probe,k,value,flat; ``classify`` writes
term, one meas_gap_eps=<eps> column per epsilon, uniform_measure_gap,
l1_density_gap and theta_gap.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .convergence import EPS_GRID, MetricSequence, classify_d_convergence
from .distances import DOptions, d_upper, theta_Y_report
from .errors import L2MetricsError
from .fiber import ThetaOptions
from .field import MetricField, make_grid, zero_field
from .samples import SEQUENCES, make_sequence, random_block_field
from .torus import PROBES, cusp_metric, inj_metric, run_probe

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3

FIELD_KINDS = ("identity", "scaled", "zero", "cusp", "inj", "random")


class InputError(Exception):
    pass


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _theta_opts(args) -> ThetaOptions:
    return ThetaOptions(max_iter=args.budget) if args.budget else ThetaOptions()


def cmd_theta(args) -> int:
    f0, f1 = fio.read_field(args.a), fio.read_field(args.b)
    mask = fio.read_mask(args.mask, f0.domain.dims) if args.mask else None
    res = theta_Y_report(f0, f1, mask, _theta_opts(args))
    sel = res.per_cell[f0.domain.check_mask(mask)]
    lines = [
        f"theta_Y {res.value!r}",
        f"cells {sel.size}",
        f"cell_theta_min {float(sel.min())!r}",
        f"cell_theta_mean {float(sel.mean())!r}",
        f"cell_theta_max {float(sel.max())!r}",
        f"converged {str(res.converged).lower()}",
    ]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_dbounds(args) -> int:
    f0, f1 = fio.read_field(args.a), fio.read_field(args.b)
    opts = DOptions(max_iter=args.budget) if args.budget else DOptions()
    res = d_upper(f0, f1, opts, with_lower=True, theta_opts=_theta_opts(args))
    lines = [
        f"lower {res.lower!r}",
        f"upper {res.upper!r}",
        f"gap {res.gap!r}",
        f"witness_steps {res.witness_path.t_count}",
        f"iterations {res.iterations}",
        f"converged {str(res.converged).lower()}",
    ]
    lines += [f"candidate {name} {value!r}" for name, value in res.candidates.items()]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_classify(args) -> int:
    terms, limit = fio.read_manifest(args.manifest)
    if args.limit:
        limit = fio.read_field(args.limit)
    if limit is None:
        raise InputError("no limit candidate: pass LIMIT or set 'limit' in the manifest")
    seq = MetricSequence(tuple(terms), limit)
    rep = classify_d_convergence(seq, args.eps_grid, args.tol_meas, args.tol_vol,
                                 with_theta=not args.no_theta, theta_opts=_theta_opts(args))
    text = _csv(rep.rows())
    text += f"# verdict {rep.verdict}\n"
    for key, value in rep.thresholds.items():
        text += f"# {key} {value}\n"
    for key, value in rep.trends.items():
        text += f"# trend {key} {value}\n"
    for note in rep.notes:
        text += f"# note {note}\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_example1(args) -> int:
    ks = args.k or ((64,) if args.probe == "injectivity" else (2, 4, 8))
    res = run_probe(args.probe, ks, args.res, args.samples)
    _emit(_csv(res.rows()), args.out)
    return EXIT_OK


def _build_field(kind: str, args):
    d = make_grid(2, args.res)
    if kind == "identity":
        return MetricField.identity(d)
    if kind == "scaled":
        return MetricField.identity(d).scaled(args.scale)
    if kind == "zero":
        return zero_field(d)
    if kind == "cusp":
        return cusp_metric(d, args.k[0] if args.k else 2)
    if kind == "inj":
        return inj_metric(d, args.k[0] if args.k else 4)
    if kind == "random":
        return random_block_field(d, np.random.default_rng(args.seed), blocks=args.blocks)
    raise InputError(f"unknown field kind {kind!r}")


def cmd_make_field(args) -> int:
    if not args.out:
        raise InputError("--out is required")
    fio.write_field(_build_field(args.kind, args), args.out, args.format)
    return EXIT_OK


def cmd_make_sequence(args) -> int:
    if not args.out:
        raise InputError("--out (manifest path) is required")
    ks = args.k or (2, 4, 8, 16)
    terms, limit = make_sequence(args.kind, make_grid(2, args.res), ks)
    manifest = Path(args.out)
    suffix = ".npz" if args.format == "binary" else ".json"
    names = []
    for i, f in enumerate(terms):
        name = f"{manifest.stem}_term{i:03d}{suffix}"
        fio.write_field(f, manifest.parent / name, args.format)
        names.append(name)
    limit_name = f"{manifest.stem}_limit{suffix}"
    fio.write_field(limit, manifest.parent / limit_name, args.format)
    fio.write_manifest(manifest, names, limit_name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="l2metrics", description="L2 and Theta distances between metric fields on a torus grid.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write output to this path instead of stdout")
    common.add_argument("--budget", type=int, default=None, help="optimizer iterations per refinement level")
    common.add_argument("--seed", type=int, default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("theta", parents=[common], help="Theta_Y between two field files")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--mask", help="mask file restricting Y")
    s.set_defaults(func=cmd_theta)

    s = sub.add_parser("dbounds", parents=[common], help="bounds on the L2 distance d")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(func=cmd_dbounds)

    s = sub.add_parser("classify", parents=[common], help="convergence report for a sequence manifest")
    s.add_argument("manifest")
    s.add_argument("limit", nargs="?")
    s.add_argument("--eps-grid", type=_float_list, default=EPS_GRID)
    s.add_argument("--tol-meas", type=float, default=None)
    s.add_argument("--tol-vol", type=float, default=None)
    s.add_argument("--no-theta", action="store_true", help="skip the Theta gaps")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("example1", parents=[common], help="torus probes as CSV")
    s.add_argument("probe", choices=PROBES)
    s.add_argument("--k", type=_int_list, default=None)
    s.add_argument("--res", type=int, default=256)
    s.add_argument("--samples", type=int, default=4, help="diameter source lattice size per axis")
    s.set_defaults(func=cmd_example1)

    s = sub.add_parser("make-field", parents=[common], help="write a field file")
    s.add_argument("kind", choices=FIELD_KINDS)
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--k", type=_int_list, default=None)
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--blocks", type=int, default=4)
    s.add_argument("--format", choices=("text", "binary"), default="text")
    s.set_defaults(func=cmd_make_field)

    s = sub.add_parser("make-sequence", parents=[common], help="write a sequence manifest and its fields")
    s.add_argument("kind", choices=SEQUENCES)
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--k", type=_int_list, default=None)
    s.add_argument("--format", choices=("text", "binary"), default="text")
    s.set_defaults(func=cmd_make_sequence)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, L2MetricsError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"l2metrics: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
