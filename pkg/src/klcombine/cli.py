"""Command-line interface.

Exit codes: 0 success, 1 input error, 2 no plausible combining distribution,
3 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io as kio
from .centroid import DEFAULT_MAX_ITER, DEFAULT_TOL, ConvergenceError, induced_weighting
from .combiner import NoPlausibleDistributionError, combine_binary
from .distributions import BernoulliProduct
from .ebayes import (
    DEFAULT_BINS,
    DEFAULT_LAMBDA,
    DEFAULT_PI0_LOWER,
    DegenerateGeneError,
    FitError,
    QuadratureError,
    run_pipeline,
    simulate_dataset,
)

EXIT_OK, EXIT_INPUT, EXIT_EMPTY, EXIT_NUMERIC = 0, 1, 2, 3
NATS_PER_BIT = math.log(2.0)

log = logging.getLogger("klcombine")


def _emit(text: str, output: str | None) -> None:
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _divergence_field(value: float, bits: bool):
    return ("value_bits", value / NATS_PER_BIT) if bits else ("value_nats", value)


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def cmd_combine_probs(args) -> int:
    probs = kio.read_probabilities(args.input)
    res = combine_binary(probs, lower=args.lower, upper=args.upper, tol=args.tol, max_iter=args.max_iter)
    key, value = _divergence_field(res.value, args.bits)
    fields = {"lo": res.lo, "hi": res.hi, "w_plus": res.w_plus, "p_plus": res.p_plus, key: value}
    if args.format == "json":
        _emit(kio.dump_json(fields), args.output)
    else:
        _emit(kio.write_csv([list(fields.values())], list(fields)), args.output)
    return EXIT_OK


def cmd_capacity(args) -> int:
    family = kio.read_family(args.input)
    res = induced_weighting(family, tol=args.tol, max_iter=args.max_iter)
    key, value = _divergence_field(res.value, args.bits)
    centroid = res.centroid.tuple_repr()
    if args.format == "json":
        doc = {
            "kind": "bernoulli-product" if isinstance(family[0], BernoulliProduct) else "finite",
            "weights": res.weights,
            "centroid": centroid,
            key: value,
            "gap_nats": res.gap,
            "iterations": res.iterations,
        }
        _emit(kio.dump_json(doc), args.output)
    else:
        rows = [[i, w, d] for i, (w, d) in enumerate(zip(res.weights, res.divergences))]
        # three tables separated by blank lines
        blocks = [
            kio.write_csv(rows, ["member", "weight", "divergence_nats"]),
            kio.write_csv([[value, res.gap, res.iterations]], [key, "gap_nats", "iterations"]),
            kio.write_csv([[k, c] for k, c in enumerate(centroid)], ["coordinate", "centroid"]),
        ]
        _emit("\n".join(blocks), args.output)
    return EXIT_OK


def _simulation(args):
    N, n, pi0, effect_sd, noise_sd = args.simulate
    return simulate_dataset(int(N), int(n), pi0, effect_sd, noise_sd, args.seed)


def cmd_simulate(args) -> int:
    if args.simulate is None:
        raise kio.InputError("simulate needs --simulate N n pi0 effect_sd noise_sd")
    sim = _simulation(args)
    _emit(kio.expression_csv(sim.matrix), args.output)
    if args.truth:
        rows = zip(sim.matrix.gene_ids, sim.alternative.astype(int))
        Path(args.truth).write_text(kio.write_csv(rows, ["gene_id", "alternative"]))
    return EXIT_OK


def cmd_combine_lfdr(args) -> int:
    config = {
        "pi0_lower": args.pi0_lower,
        "bins": args.bins,
        "lambda": args.lam,
        "tol": args.tol,
        "max_iter": args.max_iter,
    }
    if args.simulate is not None:
        matrix = _simulation(args).matrix
        N, n, pi0, effect_sd, noise_sd = args.simulate
        config["simulation"] = {"N": int(N), "n": int(n), "pi0": pi0, "effect_sd": effect_sd,
                                "noise_sd": noise_sd, "seed": args.seed}
    elif args.input is not None:
        matrix = kio.read_expression_csv(args.input)
        config["input"] = str(args.input)
    else:
        raise kio.InputError("combine-lfdr needs --input CSV or --simulate N n pi0 effect_sd noise_sd")

    result = run_pipeline(matrix, pi0_lower=args.pi0_lower, bins=args.bins, lam=args.lam,
                          tol=args.tol, max_iter=args.max_iter)
    if args.format == "json":
        _emit(kio.pipeline_json(result, config), args.output)
    else:
        _emit(kio.write_csv(kio.gene_rows(result), kio.GENE_COLUMNS), args.output)
        summary = kio.dump_json(kio.pipeline_summary(result, config))
        if args.summary:
            Path(args.summary).write_text(summary)
        elif args.output not in (None, "-"):
            Path(str(args.output) + ".summary.json").write_text(summary)
        else:
            sys.stderr.write(summary)
    return EXIT_OK


def weight_surface(step: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Rows ``(p_min, p_max, w_plus)`` over the interior grid ``step, 2 step, ...``."""
    if not 0 < step <= 0.5:
        raise ValueError("grid step must be in (0, 0.5]")
    k = int(math.floor(1.0 / step + 1e-9))
    grid = [round(i * step, 12) for i in range(1, k) if i * step < 1.0 - 1e-12]
    rows = []
    for a, lo in enumerate(grid):
        for hi in grid[a + 1:]:
            rows.append((lo, hi, combine_binary([lo, hi], tol=tol, max_iter=max_iter).w_plus))
    return rows


def means_curves(points: int, start: float, stop: float, partner: float,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Classical means and the game combination of ``x`` with ``partner`` over a log grid of ``x``."""
    if not 0 < start < stop <= 1 or points < 2:
        raise ValueError("need 0 < start < stop <= 1 and at least two points")
    rows = []
    for x in np.geomspace(start, stop, points):
        x = float(x)
        lo, hi = min(x, partner), max(x, partner)
        arith = 0.5 * (lo + hi)
        geo = math.sqrt(lo * hi)
        harm = 2.0 * lo * hi / (lo + hi)
        res = combine_binary([lo, hi], tol=tol, max_iter=max_iter)
        rows.append((x, partner, arith, geo, harm, res.p_plus, res.w_plus))
    return rows


MEANS_COLUMNS = ["p", "partner", "arithmetic", "geometric", "harmonic", "combination", "w_plus"]


def cmd_figure_weight_surface(args) -> int:
    rows = weight_surface(args.grid_step, args.tol, args.max_iter)
    header = ["p_min", "p_max", "w_plus"]
    if args.format == "json":
        _emit(kio.dump_json([dict(zip(header, r)) for r in rows]), args.output)
    else:
        _emit(kio.write_csv(rows, header), args.output)
    return EXIT_OK


def cmd_figure_means(args) -> int:
    rows = means_curves(args.points, args.start, args.stop, args.partner, args.tol, args.max_iter)
    if args.format == "json":
        _emit(kio.dump_json([dict(zip(MEANS_COLUMNS, r)) for r in rows]), args.output)
    else:
        _emit(kio.write_csv(rows, MEANS_COLUMNS), args.output)
    return EXIT_OK


COMMANDS = {
    "combine-probs": cmd_combine_probs,
    "combine-lfdr": cmd_combine_lfdr,
    "capacity": cmd_capacity,
    "simulate": cmd_simulate,
    "figure-weight-surface": cmd_figure_weight_surface,
    "figure-means": cmd_figure_means,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", type=Path)
    common.add_argument("--output", default="-", help="output path, '-' for stdout")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--tol", type=_positive(float), default=DEFAULT_TOL)
    common.add_argument("--max-iter", type=_positive(int), default=DEFAULT_MAX_ITER)
    common.add_argument("--bits", action="store_true", help="report divergences in bits")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="klcombine", description="Game-optimal combination of probability distributions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("combine-probs", parents=[common], help="combine probabilities of one event")
    p.add_argument("--lower", type=float, default=0.0)
    p.add_argument("--upper", type=float, default=1.0)

    sub.add_parser("capacity", parents=[common], help="centroid of a family read from JSON")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--simulate", nargs=5, type=float, metavar=("N", "n", "PI0", "EFFECT_SD", "NOISE_SD"))
    sim.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", parents=[common, sim], help="write a synthetic expression matrix")
    p.add_argument("--truth", type=Path, help="also write the true alternative labels here")

    p = sub.add_parser("combine-lfdr", parents=[common, sim], help="run the combined LFDR analysis")
    p.add_argument("--pi0-lower", type=float, default=DEFAULT_PI0_LOWER)
    p.add_argument("--bins", type=_positive(int), default=DEFAULT_BINS)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--summary", type=Path, help="summary JSON path (csv format only)")

    p = sub.add_parser("figure-weight-surface", parents=[common], help="optimal weight over pairs of probabilities")
    p.add_argument("--grid-step", type=float, default=0.05)

    p = sub.add_parser("figure-means", parents=[common], help="classical means versus the game combination")
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--start", type=float, default=1e-3)
    p.add_argument("--stop", type=float, default=0.2)
    p.add_argument("--partner", type=float, default=0.2, help="probability combined with each abscissa value")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NoPlausibleDistributionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ConvergenceError, FitError, QuadratureError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (kio.InputError, DegenerateGeneError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
