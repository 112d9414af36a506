"""Command-line experiment runner.

    ncfv optimize --scenario scenarios/reference.yaml --out results/
    ncfv range    --scenario ...
    ncfv channel  --scenario ... --trials 100000
    ncfv geo      --scenario ...

Every command writes CSV files whose first line is a ``# schema:`` comment.
Exit codes: 0 success, 2 configuration error, 3 infeasible optimization,
4 I/O error.
"""

import argparse
import csv
import io
import math
import os
import sys

from .channel import ErasureSpec, monte_carlo_delivery, p_delivery
from .codec import CodingParams
from .errors import ConfigurationError, InfeasibleError
from .geo import (
    WITH_NC,
    WITHOUT_NC,
    empirical_neighbor_counts,
    gain_table,
    generate_deployment,
    nc_available,
    reliability_curve,
)
from .optimizer import operative_range, optimize_rate, utility_table
from .rng import derive_seed
from .scenario import load_scenario

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4
MIN_CHANNEL_TRIALS = 1000

SCHEMAS = {
    "optimize": ("ncfv.optimize/1", ["delta1", "rho0", "w_comp", "r_star", "u_max", "p_r_star",
                                     "beta_bar", "activated", "feasible_count"]),
    "range": ("ncfv.range/1", ["delta1", "rho0", "w_comp", "r", "n", "m", "u", "p_r", "gates",
                               "optimum"]),
    "channel": ("ncfv.channel/1", ["n", "m", "delta", "analytic", "monte_carlo", "ci_halfwidth",
                                   "trials", "abs_gap"]),
    "geo_curve": ("ncfv.geo_curve/1", ["normalized_distance", "with", "without"]),
    "geo_gain": ("ncfv.geo_gain/1", ["level", "ext_with", "ext_without", "gain"]),
    "geo_neighbors": ("ncfv.geo_neighbors/1", ["deployment", "devices", "sampled", "mean",
                                               "expected", "std_error"]),
}


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    if isinstance(x, (tuple, list)):
        return ";".join(fmt(v) for v in x)
    return str(x)


def render(kind, rows):
    schema, cols = SCHEMAS[kind]
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write(out_dir, name, kind, rows):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render(kind, rows))
    return path


def _section(sc, name):
    sec = getattr(sc, name)
    if sec is None:
        raise ConfigurationError(f"scenario has no '{name}' section")
    return sec


def optimize_rows(sc):
    sw = _section(sc, "optimize")
    grid = sc.grid.build()
    rows = []
    for w in sw.w_comp:
        for rho0 in sw.rho0:
            cfg = sc.utility.build(rho0=rho0, w_comp=w)
            for d1 in sw.delta1:
                r = optimize_rate(ErasureSpec((sw.delta0, d1)), cfg, grid)
                rows.append((d1, rho0, w, r.r_star, r.u_max, r.p_r_star, r.beta_bar, r.activated,
                             r.feasible_count))
    return rows


def range_rows(sc):
    sw = _section(sc, "range")
    grid = sc.grid.build()
    rows = []
    for w in sw.w_comp:
        for rho0 in sw.rho0:
            cfg = sc.utility.build(rho0=rho0, w_comp=w)
            for d1 in sw.delta1:
                spec = ErasureSpec((sw.delta0, d1))
                table = utility_table(spec, cfg, grid)
                rng = operative_range(spec, cfg, grid, table=table)
                for c in rng.members:
                    rows.append((d1, rho0, w, c.rate, c.params.n, c.params.m, c.utility, c.p_r,
                                 c.gates, c.rate == rng.optimum.r_star))
    return rows


def channel_rows(sc):
    ch = _section(sc, "channel")
    if sc.trials < MIN_CHANNEL_TRIALS:
        raise ConfigurationError(f"channel validation needs at least {MIN_CHANNEL_TRIALS} trials")
    rows = []
    for i, (n, m, delta) in enumerate(ch.all_cases()):
        params = CodingParams(n, m, ch.L, ch.q)
        spec = ErasureSpec(delta)
        a = p_delivery(params, spec).p_success
        mc = monte_carlo_delivery(params, spec, sc.trials, derive_seed(sc.seed, i), ch.relay)
        rows.append((n, m, delta, a, mc.p_success, mc.ci_halfwidth, mc.trials,
                     abs(a - mc.p_success)))
    return rows


def geo_outputs(sc, override_cap=False):
    geo = _section(sc, "geo")
    coding = geo.coding.build()
    outputs = []
    neighbors = []
    for k, dep in enumerate(geo.deployments):
        scen = dep.build()
        without = reliability_curve(scen, coding, WITHOUT_NC)
        if nc_available(scen):
            with_pts = [r for _, r in reliability_curve(scen, coding, WITH_NC).points]
        else:
            with_pts = [None] * len(without.points)
        curve = [(d, w, wo) for (d, wo), w in zip(without.points, with_pts)]
        gains = [(g.required_reliability, g.extension_with, g.extension_without, g.gain)
                 for g in gain_table(scen, coding, geo.levels)]
        outputs.append((f"geo_curve_{dep.name}.csv", "geo_curve", curve))
        outputs.append((f"geo_gain_{dep.name}.csv", "geo_gain", gains))
        if geo.sample_devices:
            pos = generate_deployment(scen, derive_seed(sc.seed, k), override_cap=override_cap)
            counts = empirical_neighbor_counts(pos, scen, seed=derive_seed(sc.seed, k))
            mean = float(counts.mean()) if counts.size else math.nan
            se = float(counts.std(ddof=1) / math.sqrt(counts.size)) if counts.size > 1 else math.nan
            neighbors.append((dep.name, len(pos), int(counts.size), mean,
                              scen.expected_neighbors, se))
    if geo.sample_devices:
        outputs.append(("geo_neighbors.csv", "geo_neighbors", neighbors))
    return outputs


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario YAML file")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--trials", type=int, default=None, help="override Monte Carlo trials")
    common.add_argument("--override-device-cap", action="store_true",
                        help="allow sampling deployments above the device cap")
    parser = argparse.ArgumentParser(prog="ncfv", description="Network coding function experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("optimize", parents=[common], help="rate selection sweep")
    sub.add_parser("range", parents=[common], help="operative ranges and gate counts")
    sub.add_parser("channel", parents=[common], help="analytic vs Monte Carlo delivery")
    sub.add_parser("geo", parents=[common], help="coverage extension curves and gain tables")
    return parser


def run(args):
    sc = load_scenario(args.scenario)
    upd = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        upd["seed"] = args.seed
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        upd["trials"] = args.trials
    if upd:
        sc = sc.model_copy(update=upd)
    if args.command == "optimize":
        outputs = [("optimize.csv", "optimize", optimize_rows(sc))]
    elif args.command == "range":
        outputs = [("range.csv", "range", range_rows(sc))]
    elif args.command == "channel":
        outputs = [("channel.csv", "channel", channel_rows(sc))]
    else:
        outputs = geo_outputs(sc, args.override_device_cap)
    return [write(args.out, name, kind, rows) for name, kind, rows in outputs]


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        paths = run(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
