"""Command-line interface.

Exit codes: 0 success, 2 usage or input-format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import cme, ml, potts_prior
from .grid import BOUNDARIES, build_grid
from .ppm import PpmFormatError, label_image, read_ppm, write_ppm

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

FREE_ENERGY_HEADER = ["K", "f", "dfdK", "u", "branch"]
ALPHA_HEADER = ["u", "alpha", "f"]
TRACE_HEADER = ["t", "u", "alpha", "u_post", "residual"]
SWEEP_HEADER = ["K", "loglik", "u_post", "u_prior", "converged"]


class UsageError(ValueError):
    pass


def n_labels(text):
    try:
        q = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"number of labels must be an integer, got {text!r}") from None
    if q < 2:
        raise argparse.ArgumentTypeError(f"number of labels must be at least 2, got {q}")
    return q


def positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def parse_grid(text):
    """``start:stop:step`` (stop included) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ValueError
            start, stop, step = parts
            if step <= 0 or stop < start:
                raise UsageError(f"grid {text!r} needs step > 0 and stop >= start")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return np.round(start + step * np.arange(n), 12)
        vals = np.array([float(p) for p in text.split(",") if p.strip()])
    except UsageError:
        raise
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}; use start:stop:step or a,b,c") from None
    if vals.size == 0:
        raise UsageError("empty grid")
    return vals


def _size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 32x32, got {text!r}") from None
    return w, h


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _dump_json(obj, path=None):
    text = json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}


def _analyzer_graph(args):
    if args.size is None:
        if args.boundary == "free":
            raise UsageError("--boundary free needs an explicit --size WxH")
        return None
    return build_grid(args.size[0], args.size[1], args.boundary)


# --------------------------------------------------------------------------
# commands


def cmd_segment(args):
    image = read_ppm(args.input)
    config = cme.CmeConfig(q=args.labels, boundary=args.boundary or "free",
                           outer_tol=args.tol or 1e-5, max_outer=args.max_outer,
                           damping=args.damping, seed=args.seed)
    report = cme.run_cme(image, config)
    if args.out:
        write_ppm(label_image(report.labels, report.params.means), args.out)
    payload = report.to_dict()
    payload["config"] = _config(args)
    if args.report:
        _dump_json(payload, args.report)
    else:
        _dump_json({k: payload[k] for k in ("u_hat", "alpha_hat", "iterations", "converged")})
    if args.csv:
        _write_csv(args.csv, TRACE_HEADER,
                   [(r.t, r.u, r.alpha, r.u_post, r.residual) for r in report.trace])
    return EXIT_OK


def cmd_prior_curve(args):
    if args.u is None and args.K is None:
        raise UsageError("prior-curve needs --u and/or --K")
    graph = _analyzer_graph(args)
    outputs = []
    if args.u is not None:
        rows = potts_prior.alpha_curve(args.labels, parse_grid(args.u), graph=graph,
                                       tol=args.tol or 1e-8)
        outputs.append((ALPHA_HEADER, rows, args.csv))
    if args.K is not None:
        rows = _free_energy_rows(args, graph)
        path = args.fe_csv or (None if args.u is not None else args.csv)
        outputs.append((FREE_ENERGY_HEADER, rows, path))
    for header, rows, path in outputs:
        if path:
            _write_csv(path, header, rows)
        else:
            w = csv.writer(sys.stdout, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    return EXIT_OK


def _free_energy_rows(args, graph):
    K = parse_grid(args.K)
    if np.any(K < 0) or np.any(np.diff(K) < 0):
        raise UsageError("coupling grid must be non-negative and ascending")
    return potts_prior.free_energy_curve(args.labels, K, graph=graph, tol=args.tol or 1e-9)


def cmd_free_energy(args):
    if args.K is None:
        args.K = "0:4:0.02"
    rows = _free_energy_rows(args, _analyzer_graph(args))
    if args.csv:
        _write_csv(args.csv, FREE_ENERGY_HEADER, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(FREE_ENERGY_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return EXIT_OK


def cmd_transition(args):
    res = potts_prior.transition_point(args.labels, tol=args.tol or 1e-6,
                                       graph=_analyzer_graph(args))
    _dump_json(res.as_dict())
    if args.report:
        _dump_json(res.as_dict(), args.report)
    return EXIT_OK


def cmd_ml_sweep(args):
    image = read_ppm(args.input)
    grid = parse_grid(args.K) if args.K is not None else None
    rows, est = ml.sweep(image, args.labels, grid, boundary=args.boundary or "free",
                         seed=args.seed, tol=args.tol or 1e-6, damping=args.damping)
    if args.csv:
        _write_csv(args.csv, SWEEP_HEADER, [r.as_tuple() for r in rows])
    payload = est.to_dict()
    payload["config"] = _config(args)
    if args.report:
        _dump_json(payload, args.report)
    else:
        _dump_json({k: payload[k] for k in ("K_hat", "kink_detected", "residual", "K_C")})
    if args.out:
        write_ppm(label_image(est.labels, est.params.means), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="pottsseg",
                                     description="Potts-prior colour image segmentation with loopy BP.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, boundary_default):
        p.add_argument("--labels", type=n_labels, required=True, help="number of labels q (>= 2)")
        p.add_argument("--boundary", choices=BOUNDARIES, default=boundary_default)
        p.add_argument("--tol", type=positive, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--csv", default=None, help="CSV output path")
        p.add_argument("--report", default=None, help="JSON report path")

    def image_opts(p):
        p.add_argument("--input", required=True, help="binary PPM (P6, maxval 255)")
        p.add_argument("--out", default=None, help="segmentation PPM coloured by label means")
        p.add_argument("--damping", type=float, default=0.0)

    def analyzer_opts(p):
        p.add_argument("--size", type=_size, default=None,
                       help="finite lattice WxH; default is the infinite periodic lattice")

    p = sub.add_parser("segment", help="estimate u, alpha(u) and colours, then label the image")
    common(p, "free")
    image_opts(p)
    p.add_argument("--max-outer", type=int, default=200)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("prior-curve", help="alpha(u) and/or free-energy curves of the prior")
    common(p, "periodic")
    analyzer_opts(p)
    p.add_argument("--u", default=None, help="disagreement grid start:stop:step")
    p.add_argument("--K", default=None, help="coupling grid start:stop:step")
    p.add_argument("--fe-csv", default=None, help="free-energy CSV when both grids are given")
    p.set_defaults(func=cmd_prior_curve)

    p = sub.add_parser("free-energy", help="Bethe free energy of the prior along a coupling grid")
    common(p, "periodic")
    analyzer_opts(p)
    p.add_argument("--K", default=None, help="coupling grid start:stop:step (default 0:4:0.02)")
    p.set_defaults(func=cmd_free_energy)

    p = sub.add_parser("transition", help="first-order transition point of the prior")
    common(p, "periodic")
    analyzer_opts(p)
    p.set_defaults(func=cmd_transition)

    p = sub.add_parser("ml-sweep", help="marginal likelihood over a coupling grid")
    common(p, "free")
    image_opts(p)
    p.add_argument("--K", default=None, help="coupling grid start:stop:step or list (default 0:4:0.02)")
    p.set_defaults(func=cmd_ml_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, PpmFormatError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (potts_prior.ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
