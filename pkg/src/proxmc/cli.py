"""Command-line orchestration: ingest -> map -> sample -> report.

Outputs are deterministic for a fixed (data, config, seed) triple: chain
RNG streams derive from one master seed, CSV fields are written with
repr-exact float formatting, and ``run.json`` captures everything needed
to reproduce a run byte for byte.

Config files use one ``key = value`` per line (``#`` comments allowed);
keys are the long option names with dashes replaced by underscores.
Command-line flags win over config-file values.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, traceio
from .diagnostics import distance_to_map, gelman_rubin, mean_abs_acf
from .errors import DataError, DivergenceError, InitializationError, ProxmcError
from .estimators import credibility_band, denoised_band
from .ingest import lambda_defaults, parse_jhu_csv, to_daily, window
from .linops import build_D
from .map_solver import map_uniqueness_check, solve_map
from .model import EpiModel, build_serial_interval
from .samplers import ChainTrace, DiffOps, SamplerConfig, chain_seed_sequences, run_chain

EXIT_DATA = 2
EXIT_DIVERGED = 3
EXIT_INIT = 4
EXIT_EMPTY = 5


class EmptyTracesError(ProxmcError):
    pass


DEFAULTS = {
    "days": 35,
    "tau": 26,
    "drift": "pgdual",
    "scheme": "gibbs",
    "cov": "o",
    "chains": 15,
    "iters": 100000,
    "burnin": 30000,
    "seed": 0,
    "alpha": 0.05,
    "thinning": 10,
    "jobs": 1,
    "out_dir": "out",
    "max_lag": 200,
    "map_iters": 20000,
    "map_tol": 1e-9,
}


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with CRLF line endings and a fixed column order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def parse_config_file(path) -> dict:
    """Parse the documented key = value grammar (one pair per line)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _resolve_data_path(path_str) -> Path:
    """Absolute/CWD path, else relative to PROXMC_DATA_DIR."""
    p = Path(path_str)
    if p.exists():
        return p
    env = os.environ.get("PROXMC_DATA_DIR")
    if env and (Path(env) / p).exists():
        return Path(env) / p
    raise DataError(f"data file not found: {path_str}")


def load_window(opts):
    for key in ("data", "country", "start"):
        if not opts.get(key):
            raise DataError(f"missing required option --{key}")
    daily = to_daily(parse_jhu_csv(_resolve_data_path(opts["data"]), opts["country"]))
    counts = window(daily, opts["start"], n_days=int(opts["days"]), tau=int(opts["tau"]))
    phi = build_serial_interval(tau=int(opts["tau"]))
    model = EpiModel.build(counts, phi, lambda_defaults(counts))
    return counts, model


def cmd_ingest(opts) -> int:
    counts, model = load_window(opts)
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    tau = int(opts["tau"])
    hist_dates = [counts.dates[0] + datetime.timedelta(days=d - tau) for d in range(tau)]
    rows = [(d.isoformat(), v, 1) for d, v in zip(hist_dates, counts.history)]
    rows += [(d.isoformat(), v, 0) for d, v in zip(counts.dates, counts.values)]
    write_csv(out / "window.csv", ["date", "count", "is_history"], rows)
    meta = {
        "country": opts["country"],
        "start": str(opts["start"]),
        "days": int(opts["days"]),
        "tau": tau,
        "lambda_r": model.hyper.lambda_r,
        "lambda_o": model.hyper.lambda_o,
    }
    (out / "window_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {out / 'window.csv'}")
    return 0


def cmd_map(opts) -> int:
    counts, model = load_window(opts)
    diffop = build_D(model.T)
    theta, trace = solve_map(model, diffop, max_iters=int(opts["map_iters"]), tol=float(opts["map_tol"]))
    verdict = map_uniqueness_check(theta, model, diffop)
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    intensity = theta.R * model.phi_z + theta.O
    rows = [
        (d.isoformat(), r, o, i)
        for d, r, o, i in zip(counts.dates, theta.R, theta.O, intensity)
    ]
    write_csv(out / "map.csv", ["date", "R_map", "O_map", "intensity"], rows)
    meta = {
        "objective": float(trace[-1]),
        "iterations": int(len(trace)),
        "uniqueness": verdict,
    }
    (out / "map_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {out / 'map.csv'} (objective {trace[-1]:.6g}, {verdict})")
    return 0


def _run_one_chain(args):
    model, diffops, cfg_kwargs, ss_state = args
    cfg = SamplerConfig(**cfg_kwargs)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(**ss_state)))
    return run_chain(model, diffops, cfg, rng=rng)


def cmd_sample(opts) -> int:
    counts, model = load_window(opts)
    diffops = DiffOps.build(model.T)
    cfg_kwargs = dict(
        drift=opts["drift"],
        scheme=opts["scheme"],
        covariance=opts["cov"],
        n_max=int(opts["iters"]),
        n_burnin=int(opts["burnin"]),
        seed=int(opts["seed"]),
        thinning=int(opts["thinning"]),
    )
    seqs = chain_seed_sequences(int(opts["seed"]), int(opts["chains"]))
    jobs = [(model, diffops, cfg_kwargs, {"entropy": s.entropy, "spawn_key": s.spawn_key}) for s in seqs]
    if int(opts["jobs"]) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=int(opts["jobs"])) as ex:
            traces = list(ex.map(_run_one_chain, jobs))
    else:
        traces = [_run_one_chain(j) for j in jobs]
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    acc_rows, step_rows = [], []
    for k, tr in enumerate(traces):
        traceio.write_trace(out / f"trace_{k}.bin", tr.samples_r, tr.samples_o)
        acc_rows += [(k, int(n), a, b) for n, a, b in tr.acceptance]
        step_rows += [(k, int(n), g1, g2) for n, g1, g2 in tr.stepsizes]
    write_csv(out / "acceptance.csv", ["chain", "end_iteration", "acc_r", "acc_o"], acc_rows)
    write_csv(out / "stepsizes.csv", ["chain", "end_iteration", "gamma1", "gamma2"], step_rows)
    run_meta = {
        k: (str(v) if isinstance(v, datetime.date) else v)
        for k, v in opts.items()
        if not k.startswith("_") and k != "func"
    }
    run_meta["version"] = __version__
    (out / "run.json").write_text(json.dumps(run_meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(traces)} trace file(s) to {out}")
    return 0


def _load_traces(out: Path):
    traces = []
    k = 0
    while (out / f"trace_{k}.bin").exists():
        r, o = traceio.read_trace(out / f"trace_{k}.bin")
        traces.append(ChainTrace(samples_r=r, samples_o=o, acceptance=np.empty((0, 3)),
                                 stepsizes=np.empty((0, 3)), seed=k, n_burnin=0, thinning=1))
        k += 1
    return traces


def cmd_report(opts) -> int:
    out = Path(opts["out_dir"])
    run_file = out / "run.json"
    if run_file.exists():
        # a saved run provides defaults for anything not given explicitly
        saved = json.loads(run_file.read_text())
        explicit = opts.get("_explicit", set())
        for key, val in saved.items():
            if key == "out_dir" or key == "version":
                continue
            if (key in DEFAULTS or key in ("data", "country", "start")) and key not in explicit:
                opts[key] = val
    counts, model = load_window(opts)
    traces = _load_traces(out)
    if not traces or all(t.n_samples == 0 for t in traces):
        raise EmptyTracesError("no stored samples found (run `sample` first)")
    alpha = float(opts["alpha"])
    r_band = credibility_band(traces, "R", alpha=alpha, dates=counts.dates)
    o_band = credibility_band(traces, "O", alpha=alpha, dates=counts.dates)
    zd_band = denoised_band(counts, o_band)
    rows = [
        (
            d.isoformat(), z,
            zd_band.lower[t], zd_band.median[t], zd_band.upper[t],
            r_band.lower[t], r_band.median[t], r_band.upper[t],
            o_band.lower[t], o_band.median[t], o_band.upper[t],
        )
        for t, (d, z) in enumerate(zip(counts.dates, counts.values))
    ]
    write_csv(
        out / "bands.csv",
        ["date", "Z", "ZD_lo", "ZD_med", "ZD_hi", "R_lo", "R_med", "R_hi", "O_lo", "O_med", "O_hi"],
        rows,
    )

    diag_rows = []
    n0 = traces[0].n_samples
    max_lag = min(int(opts["max_lag"]), n0 - 1)
    if max_lag >= 1:
        acf = mean_abs_acf(traces[0], max_lag)
        diag_rows += [("acf", lag, float(v)) for lag, v in enumerate(acf)]
    if len(traces) >= 2:
        n_min = min(t.n_samples for t in traces)
        checkpoints = sorted({max(2, (n_min * k) // 10) for k in range(1, 11)})
        gr = gelman_rubin(traces, checkpoints)
        burnin = int(opts.get("burnin") or 0)
        thin = int(opts.get("thinning") or 1)
        for n, gmax, gmean in zip(gr["at"], gr["max"], gr["mean"]):
            it = burnin + int(n) * thin
            diag_rows.append(("gr_max", it, gmax))
            diag_rows.append(("gr_mean", it, gmean))
    map_file = out / "map.csv"
    if map_file.exists():
        with open(map_file, newline="", encoding="utf-8") as fh:
            r_map = np.array([float(row["R_map"]) for row in csv.DictReader(fh)])
        dist = distance_to_map(traces[0].samples_r, r_map)
        diag_rows += [("dist_map", i, float(v)) for i, v in enumerate(dist)]
    write_csv(out / "diagnostics.csv", ["kind", "index", "value"], diag_rows)
    print(f"wrote {out / 'bands.csv'} and {out / 'diagnostics.csv'}")
    return 0


def cmd_all(opts) -> int:
    cmd_ingest(opts)
    cmd_map(opts)
    cmd_sample(opts)
    return cmd_report(opts)


def build_parser():
    p = argparse.ArgumentParser(prog="proxmc", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"proxmc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    commands = {
        "ingest": cmd_ingest,
        "map": cmd_map,
        "sample": cmd_sample,
        "report": cmd_report,
        "all": cmd_all,
    }
    for name, func in commands.items():
        sp = sub.add_parser(name, help=f"{name} stage")
        sp.set_defaults(func=func)
        sp.add_argument("--config", default=None, help="key=value config file; flags win")
        sp.add_argument("--data", default=None, help="JHU cumulative CSV (or relative to PROXMC_DATA_DIR)")
        sp.add_argument("--country", default=None)
        sp.add_argument("--start", default=None, help="window start date, ISO format")
        sp.add_argument("--days", type=int, default=None)
        sp.add_argument("--tau", type=int, default=None)
        sp.add_argument("--out-dir", default=None)
        if name in ("map", "all"):
            sp.add_argument("--map-iters", type=int, default=None)
            sp.add_argument("--map-tol", type=float, default=None)
        if name in ("sample", "all"):
            sp.add_argument("--drift", choices=["rw", "pgdec", "pgdual"], default=None)
            sp.add_argument("--scheme", choices=["mh", "gibbs"], default=None)
            sp.add_argument("--cov", choices=["i", "o"], default=None)
            sp.add_argument("--chains", type=int, default=None)
            sp.add_argument("--iters", type=int, default=None)
            sp.add_argument("--burnin", type=int, default=None)
            sp.add_argument("--seed", type=int, default=None)
            sp.add_argument("--thinning", type=int, default=None)
            sp.add_argument("--jobs", type=int, default=None)
        if name in ("report", "all"):
            sp.add_argument("--alpha", type=float, default=None)
            sp.add_argument("--max-lag", type=int, default=None)
            if name == "report":
                sp.add_argument("--burnin", type=int, default=None)
                sp.add_argument("--thinning", type=int, default=None)
    return p


_INT_KEYS = {"days", "tau", "chains", "iters", "burnin", "seed", "thinning", "jobs", "max_lag", "map_iters"}
_FLOAT_KEYS = {"alpha", "map_tol"}


def _effective_options(args) -> dict:
    opts = dict(DEFAULTS)
    explicit = set()
    if getattr(args, "config", None):
        for key, raw in parse_config_file(args.config).items():
            if key in _INT_KEYS:
                opts[key] = int(raw)
            elif key in _FLOAT_KEYS:
                opts[key] = float(raw)
            else:
                opts[key] = raw
            explicit.add(key)
    for key, val in vars(args).items():
        if key in ("config", "command", "func"):
            continue
        if val is not None:
            opts[key] = val
            explicit.add(key)
    opts["_explicit"] = explicit
    return opts


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    opts = _effective_options(args)
    try:
        return args.func(opts)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except InitializationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INIT
    except EmptyTracesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ProxmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
