"""Command line entry points: run, serve, synth."""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .pipeline import PipelineConfig, StageError, load_session, run_pipeline
from .synth import plan_trial, run_registration_trial


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcskel",
                                     description="curve skeletons from point clouds")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="extract a skeleton from a point cloud")
    runp.add_argument("--input", required=True, help="xyz / xyzn / ascii ply file")
    runp.add_argument("--out", required=True, help="artifact directory")
    runp.add_argument("--clusters", type=int, default=50)
    runp.add_argument("--k1", default="auto",
                      help="coverage percentage, or 'auto' for the maximum feasible")
    runp.add_argument("--k2", type=float, default=5.0, help="overlap budget percentage")
    runp.add_argument("--seed", type=int, default=7)
    runp.add_argument("--scale-jump-form", choices=("verbatim", "ratio"), default="verbatim")
    runp.add_argument("--scale-jump-threshold", type=float, default=None)

    servep = sub.add_parser("serve", help="serve a finished run for review")
    servep.add_argument("--session", required=True, help="artifact directory of a run")
    servep.add_argument("--port", type=int, default=8787)
    servep.add_argument("--host", default="127.0.0.1")
    servep.add_argument("--static", default=None, help="directory with the browser UI build")

    synthp = sub.add_parser("synth", help="registration trials on synthetic shapes")
    synthp.add_argument("--trials", type=int, required=True)
    synthp.add_argument("--sampling", choices=("regular", "random"), default="regular")
    synthp.add_argument("--normals", choices=("on", "off", "both"), default="both")
    synthp.add_argument("--seed", type=int, default=0)
    synthp.add_argument("--csv", default=None, help="write per-trial records here")
    synthp.add_argument("--dest-width", type=int, default=1,
                        help="destination neighborhood width, in slices")
    return parser


def _cmd_run(args) -> int:
    if args.k1 == "auto":
        k1 = "auto"
    else:
        try:
            k1 = float(args.k1)
        except ValueError:
            print(f"--k1 must be a number or 'auto', got {args.k1!r}", file=sys.stderr)
            return 2
    config = PipelineConfig(input_path=args.input, out_dir=args.out,
                            clusters=args.clusters, k1=k1, k2=args.k2, seed=args.seed)
    config.grow.scale_jump_form = args.scale_jump_form
    config.grow.scale_jump_threshold = args.scale_jump_threshold
    try:
        result = run_pipeline(config)
    except StageError as err:
        print(f"error in stage {err.stage}: {err}", file=sys.stderr)
        return 1
    counts = result.manifest["counts"]
    print(f"{counts['n_candidates']} candidate parts, {counts['n_selected']} selected")
    print(f"skeleton: {result.skeleton.n_vertices} vertices, "
          f"{len(result.skeleton.edges)} edges, {result.skeleton.leaf_count} leaves")
    print(f"artifacts written to {result.out_dir}")
    return 0


def _cmd_serve(args) -> int:
    from .server import serve

    print(f"rebuilding session from {args.session} ...")
    try:
        session = load_session(args.session)
    except FileNotFoundError as err:
        print(str(err), file=sys.stderr)
        return 1
    print(f"serving on http://{args.host}:{args.port}")
    serve(session, port=args.port, host=args.host, static_dir=args.static)
    return 0


def _cmd_synth(args) -> int:
    if args.trials < 1:
        print("need at least one trial", file=sys.stderr)
        return 1
    modes = {"on": [True], "off": [False], "both": [True, False]}[args.normals]
    rows = []
    n_failed = 0
    for idx in range(args.trials):
        spec, source, dest = plan_trial(args.seed, idx, args.sampling, args.dest_width)
        for use_normals in modes:
            rec = run_registration_trial(spec, source, dest, use_normals,
                                         args.dest_width, trial_index=idx)
            if rec.failed:
                n_failed += 1
                continue
            rows.append(rec)

    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["trial", "sampling", "normals", "rot_err",
                             "plane_err_deg", "reg_cost_deg", "scale_err"])
            for r in rows:
                writer.writerow([r.trial_index, r.sampling,
                                 "on" if r.use_normals else "off",
                                 repr(r.rot_err), repr(r.plane_err_deg),
                                 repr(r.reg_cost_deg), repr(r.scale_err)])
        print(f"wrote {len(rows)} records to {args.csv}")

    for use_normals in modes:
        sub = [r for r in rows if r.use_normals == use_normals]
        if not sub:
            continue
        label = "with normals" if use_normals else "without normals"
        print(f"{label}: n={len(sub)} "
              f"rot_err={np.mean([r.rot_err for r in sub]):.4f} "
              f"plane_err={np.mean([r.plane_err_deg for r in sub]):.2f} deg "
              f"reg_cost={np.mean([r.reg_cost_deg for r in sub]):.2f} deg "
              f"scale_err={np.mean([r.scale_err for r in sub]):.4f}")
    if n_failed:
        print(f"{n_failed} failed registrations excluded")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "serve":
        return _cmd_serve(args)
    return _cmd_synth(args)


if __name__ == "__main__":
    sys.exit(main())
