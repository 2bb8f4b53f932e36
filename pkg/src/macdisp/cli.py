"""Command-line front end: ``macdisp {region,dispersion,simulate,gaussian,replay}``.

Every run writes its artifacts to ``--out`` and then ``manifest.json``;
``replay`` reruns a manifest's command into a new directory.
Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._quadrature import QuadratureError
from .dispersion import all_dispersions, mean_vector, ordering_gaps
from .export import boundaries_csv, boundaries_svg, boundary_provenance, dumps, rows_csv
from .gaussian import GaussianMac, closed_form_iv, convergence_table, gauss_rule, hermite_expectation, normal_moment
from .model import ModelError, dump_document, info_density, joint_law, load_channel, load_inputs, typed_inputs
from .montecarlo import SimConfig, clt_distance_result, empirical_in_moments, exact_moments, pe_upper_bound
from .mvn import NotPSDError
from .region import (
    RegionConfig,
    capacity_union,
    collision_channel,
    collision_family,
    collision_inputs,
    first_order_region,
    rectangle_deviation,
    trace_boundary,
)

EXIT_USAGE = 2
EXIT_NUMERIC = 3
LN2 = math.log(2.0)


class ConfigError(Exception):
    pass


class Run:
    """Collects output files; the manifest goes last."""

    def __init__(self, out: Path, command: str, config: dict, argv: list[str]):
        self.out = out
        self.command = command
        self.config = config
        self.argv = argv
        self.files: list[str] = []
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()

    def write(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text, encoding="utf-8")
        self.files.append(name)

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.config,
            "argv": self.argv,
            "seed": self.config.get("seed"),
            "version": __version__,
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "outputs": list(self.files),
        }
        (self.out / "manifest.json").write_text(dumps(manifest), encoding="utf-8")


# --------------------------------------------------------------------------
# Shared argument handling


def _add_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--channel", type=Path, help="channel/input JSON document")
    p.add_argument("--collision", action="store_true", help="use the collision channel")
    p.add_argument("--p1", type=float, default=0.2)
    p.add_argument("--p2", type=float, default=0.2)


def _source(args):
    if args.collision:
        return collision_channel(), collision_inputs(args.p1, args.p2)
    if args.channel is None:
        raise ConfigError("give --channel FILE or --collision")
    try:
        text = args.channel.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read channel file: {exc}") from None
    ch = load_channel(text)
    return ch, load_inputs(text, ch)


def _config_echo(args) -> dict:
    skip = {"func", "out"}
    echo = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        echo[k] = str(v) if isinstance(v, Path) else v
    return echo


def _rates(i) -> dict:
    a = i.as_array()
    return {"nats": a.tolist(), "bits": (a / LN2).tolist()}


# --------------------------------------------------------------------------
# Commands


def cmd_region(args, run: Run) -> str:
    if args.capacity_union:
        if not args.collision:
            raise ConfigError("--capacity-union is available for --collision")
        grid = args.grid
        union = capacity_union(
            collision_family(grid), args.resolution, f"collision channel, {grid}x{grid} grid on [0,1/2)^2"
        )
        union.provenance["grid"] = grid
        run.write("capacity_union.csv", boundaries_csv([union]))
        run.write("capacity_union.svg", boundaries_svg([union], "Collision channel capacity region"))
        run.write("capacity_union.json", dumps({"boundaries": boundary_provenance([union])}))
        return f"capacity union over {grid * grid} input pairs: {len(union.points)} boundary points"

    ch, inp = _source(args)
    cfg = RegionConfig(args.n, args.eps, args.resolution)
    j = joint_law(ch, inp)
    d = info_density(j)
    i = mean_vector(j, d)
    mats = all_dispersions(j, d)
    bounds = [first_order_region(i, args.resolution)]
    for kind in ("cc", "cc_iid_1", "cc_iid_2", "iid"):
        bounds.append(trace_boundary(i, mats[kind], cfg, kind))
    run.write("region.csv", boundaries_csv(bounds))
    run.write("region.svg", boundaries_svg(bounds, f"Second-order regions, n={cfg.n}, eps={cfg.eps:g}"))
    summary = {
        "I": _rates(i),
        "boundaries": boundary_provenance(bounds),
        "rectangle_deviation_nats": {b.label: rectangle_deviation(b) for b in bounds[1:] if not b.empty},
    }
    run.write("region.json", dumps(summary))
    empty = [b.label for b in bounds[1:] if b.empty]
    return "region traced" + (f"; empty at this (n, eps): {', '.join(empty)}" if empty else "")


def cmd_dispersion(args, run: Run) -> str:
    ch, inp = _source(args)
    j = joint_law(ch, inp)
    d = info_density(j)
    i = mean_vector(j, d)
    mats = all_dispersions(j, d)
    report = {
        "I": _rates(i),
        "V": {k: {**m.to_json(), "eigenvalues": m.eigenvalues.tolist(), "rank": int(np.sum(m.eigenvalues > 1e-12 * max(1.0, m.eigenvalues.max())))} for k, m in mats.items()},
        "ordering_gaps": ordering_gaps(mats),
        "document": dump_document(ch, inp),
    }
    report["rank_deficient"] = report["V"]["cc"]["rank"] < 3
    if args.n is not None:
        typed = typed_inputs(inp, args.n)
        law = joint_law(ch, typed.inputs)
        report["finite_n"] = exact_moments(ch, inp, args.n).to_json()
        report["finite_n"]["block_sizes"] = list(typed.block_sizes)
        report["finite_n"]["I_typed"] = mean_vector(law, info_density(law)).as_array().tolist()
    run.write("dispersion.json", dumps(report))
    gaps = report["ordering_gaps"]
    return f"rank(V)={report['V']['cc']['rank']}; min ordering gap {min(gaps.values()):.3g}"


def _seed(args) -> int:
    env = os.environ.get("MACDISP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"MACDISP_SEED is not an integer: {env!r}") from None
    return args.seed


def cmd_simulate(args, run: Run) -> str:
    ch, inp = _source(args)
    seed = _seed(args)
    run.config["seed"] = seed
    if args.sweep:
        rows = []
        for n in args.sweep:
            cfg = SimConfig(n, args.trials, seed, args.workers, args.chunk_size)
            res = clt_distance_result(ch, inp, cfg, args.sampler)
            rows.append(
                {"n": n, "distance": res.distance, "distance_sqrt_n": res.distance * math.sqrt(n), "rank": res.rank, "trials": res.trials}
            )
        run.write("clt_sweep.csv", rows_csv(rows, ["n", "distance", "distance_sqrt_n", "rank", "trials"]))
        run.write("clt_sweep.json", dumps({"rows": rows, "seed": seed, "sampler": args.sampler}))
        return "CLT sweep: " + ", ".join(f"n={r['n']}: {r['distance']:.4g}" for r in rows)

    cfg = SimConfig(args.n, args.trials, seed, args.workers, args.chunk_size)
    report: dict = {"n": cfg.n, "trials": cfg.trials, "seed": seed, "workers": cfg.workers, "sampler": args.sampler}
    est = empirical_in_moments(ch, inp, cfg, args.sampler)
    exact = exact_moments(ch, inp, cfg.n)
    z = est.z_scores(exact.exact_cov)
    report["moments"] = {
        "empirical_mean": est.mean.tolist(),
        "exact_mean": exact.mean.tolist(),
        "mean_stderr": est.mean_stderr.tolist(),
        "empirical_cov": est.cov.ravel().tolist(),
        "exact_cov": exact.exact_cov.ravel().tolist(),
        "cov_stderr": est.cov_stderr.ravel().tolist(),
        "max_z": float(z.max()),
    }
    msg = f"max covariance z-score {z.max():.3g}"
    if args.rates is not None:
        bound = pe_upper_bound(ch, inp, cfg, *args.rates, sampler=args.sampler)
        report["bound"] = bound.to_json()
        msg += f"; error bound {bound.bound:.4g}"
    run.write("simulate.json", dumps(report))
    return msg


def _m_range(text: str) -> list[int]:
    try:
        lo, hi = (int(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError("need 1 <= LO <= HI")
    return list(range(lo, hi + 1))


def cmd_gaussian(args, run: Run) -> str:
    mac = GaussianMac(args.p1, args.p2)
    i, v = closed_form_iv(mac)
    closed = {"I": _rates(i), "V": v.m.ravel().tolist()}
    if args.closed_form:
        run.write("gaussian_closed_form.json", dumps(closed))
        return "I = " + ", ".join(f"{x:.6f}" for x in i.as_array()) + " nats; V = " + np.array2string(v.m, precision=6)
    ms = args.m_sweep or [args.m]
    rows = convergence_table(mac, ms)
    moments = []
    for m in ms:
        rule = gauss_rule(m)
        moment_err = max(abs(float(rule.moment(k) - normal_moment(k))) for k in range(2 * m))
        herm = max((abs(hermite_expectation(m, k, args.p1, args.p2)) for k in range(1, 2 * m)), default=0.0) if args.p1 + args.p2 > 0 else 0.0
        moments.append({"m": m, "max_moment_error": moment_err, "max_hermite_low_order": herm})
    run.write("gaussian_sweep.csv", rows_csv(rows))
    run.write("gaussian.json", dumps({"closed_form": closed, "rows": rows, "moment_checks": moments}))
    last = rows[-1]
    return f"m={last['m']}: |I_m - I|={last['I_err_inf']:.3g}, |V_m - V|={last['V_err_inf']:.3g}, D_m={last['D_m']:.3g}"


def _strip_out(argv: list[str]) -> list[str]:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out":
            skip = True
        elif not a.startswith("--out="):
            out.append(a)
    return out


def replay_argv(manifest: dict, out: Path) -> list[str]:
    """Arguments that rerun ``manifest``'s command into ``out`` with the same seed."""
    argv = list(manifest.get("argv") or [])
    if not argv or argv[0] != manifest.get("command"):
        raise ConfigError("manifest does not record a replayable command")
    if argv[0] == "replay":
        raise ConfigError("cannot replay a replay manifest")
    if manifest.get("seed") is not None:
        argv += ["--seed", str(manifest["seed"])]
    return argv + ["--out", str(out)]


# --------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="macdisp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("region", help="first- and second-order rate regions")
    _add_source(p)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--capacity-union", action="store_true")
    p.add_argument("--grid", type=int, default=200, help="lattice size per axis for --capacity-union")
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("dispersion", help="rates, dispersion matrices and ordering gaps")
    _add_source(p)
    p.add_argument("--n", type=int, default=None, help="also report exact finite-n moments")
    p.set_defaults(func=cmd_dispersion)

    p = sub.add_parser("simulate", help="moment match, error bound and CLT sweep")
    _add_source(p)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--chunk-size", type=int, default=8192)
    p.add_argument("--sampler", choices=("counts", "sequence"), default="counts")
    p.add_argument("--sweep", type=lambda s: [int(t) for t in s.split(",")], default=None, help="comma-separated n values")
    p.add_argument("--rates", type=float, nargs=2, metavar=("R1", "R2"), default=None, help="also evaluate the error bound (nats)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gaussian", help="Gaussian MAC closed form and quantized inputs")
    p.add_argument("--p1", type=float, default=1.0)
    p.add_argument("--p2", type=float, default=1.0)
    p.add_argument("--m", type=_positive_int, default=8)
    p.add_argument("--m-sweep", type=_m_range, default=None, metavar="LO:HI")
    p.add_argument("--closed-form", action="store_true")
    p.set_defaults(func=cmd_gaussian)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest", type=Path)

    for name, sp in sub.choices.items():
        sp.add_argument("--out", type=Path, default=Path("macdisp-out"), help="output directory")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        try:
            manifest = json.loads(args.manifest.read_text(encoding="utf-8"))
            return main(replay_argv(manifest, args.out))
        except (OSError, ValueError, ConfigError) as exc:
            print(f"macdisp: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    run = Run(args.out, args.command, _config_echo(args), _strip_out(argv))
    try:
        message = args.func(args, run)
    except (ConfigError, ModelError, FileNotFoundError) as exc:
        print(f"macdisp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QuadratureError, NotPSDError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"macdisp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"macdisp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run.finish()
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
