"""Command-line front end and figure-data harness.

Rates are packets/second inside the library. Flags and config keys ending
in ``_bps`` are bits/second and are converted with the flow's mean packet
size. Every subcommand writes ``manifest.json`` next to its outputs;
``llrlink rerun manifest.json`` replays it.

Exit codes: 0 ok, 2 usage or config error, 3 domain error, 4 unstable run.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import analytics as qa
from .allocator import SweepConfig, compare_strategies, empirical_pfll, percentile_impact
from .analytics import LinkLoad, ServiceModel
from .errors import LLRError, SimulationAbort, UnstableLinkError
from .sim import DS, NDS, SimConfig, export_packets, nearest_rank, run
from .traffic import (
    DEFAULT_BATCH_GAP,
    STADIA_PFLL_REFERENCE,
    STADIA_TABLE,
    BatchPoisson,
    BatchSize,
    Deterministic,
    Empirical,
    Exponential,
    Poisson,
    TraceReplay,
    load_trace,
    mean_size_bits,
    stadia_trace,
    trace_stats,
    write_trace,
)

log = logging.getLogger("llrlink")

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_UNSTABLE = 0, 2, 3, 4
MANIFEST = "manifest.json"
FIGURE_CVS = (0.0, 0.5, 1.0, 2.0)
FIG5_PAIRS = ((0.05, 0.0), (0.1, 1.0), (0.2, 0.0), (0.2, 1.0))


class UsageError(Exception):
    """Bad flags or a malformed config file."""


# -- unit helpers --------------------------------------------------------

def bps_to_pps(rate_bps: float, mean_bits: float) -> float:
    return rate_bps / mean_bits


def pps_to_bps(rate_pps: float, mean_bits: float) -> float:
    return rate_pps * mean_bits


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# -- service model from flags --------------------------------------------

def _service(args, cv: float) -> ServiceModel:
    if args.mu is not None:
        return ServiceModel.from_rate(args.mu, cv)
    if args.link_rate is None or args.mean_size is None:
        raise UsageError("give --mu, or both --link-rate and --mean-size")
    return ServiceModel.from_link(args.link_rate, args.mean_size, cv)


def _mean_bits(args) -> Optional[float]:
    return args.mean_size if args.mu is None else None


# -- config files --------------------------------------------------------

class Config:
    """Thin accessor over a parsed TOML document with located errors."""

    def __init__(self, data: dict, base_dir: str = "."):
        self.data = data
        self.base_dir = base_dir

    @classmethod
    def load(cls, path: str) -> "Config":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as e:
            raise UsageError(f"cannot read config {path}: {e.strerror}") from None
        except tomllib.TOMLDecodeError as e:
            raise UsageError(f"{path}: {e}") from None
        return cls(data, os.path.dirname(os.path.abspath(path)))

    def section(self, name: str, required: bool = True) -> Optional[dict]:
        sec = self.data.get(name)
        if sec is None:
            if required:
                raise UsageError(f"config: missing [{name}] section")
            return None
        if not isinstance(sec, dict):
            raise UsageError(f"config: [{name}] must be a table")
        return sec

    @staticmethod
    def get(sec: dict, name: str, key: str, kind=float, default=None, required=False):
        if key not in sec:
            if required:
                raise UsageError(f"config: missing key {name}.{key}")
            return default
        v = sec[key]
        try:
            if kind is float and isinstance(v, bool):
                raise TypeError
            return kind(v)
        except (TypeError, ValueError):
            raise UsageError(f"config: {name}.{key} must be {kind.__name__}, got {v!r}") from None

    def path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)


def _link_rate(cfg: Config):
    sec = cfg.section("link")
    mu = Config.get(sec, "link", "mu")
    rate = Config.get(sec, "link", "rate_bps")
    if (mu is None) == (rate is None):
        raise UsageError("config: [link] needs exactly one of mu or rate_bps")
    # mu mode: packets of one bit on a link of mu bits/s
    return (mu, True) if mu is not None else (rate, False)


def _size_model(sec: dict, name: str, unit_mode: bool, default: str = "exponential"):
    kind = Config.get(sec, name, "sizes", str, default)
    mean = Config.get(sec, name, "mean_size_bits", float, 1.0 if unit_mode else None)
    if kind == "exponential":
        if mean is None:
            raise UsageError(f"config: missing key {name}.mean_size_bits")
        return Exponential(mean)
    if kind == "deterministic":
        if mean is None:
            raise UsageError(f"config: missing key {name}.mean_size_bits")
        return Deterministic(mean)
    if kind == "empirical":
        return Empirical()
    raise UsageError(f"config: {name}.sizes must be exponential, deterministic or empirical")


def _rate(sec: dict, name: str, mean_bits: Optional[float], required: bool = True):
    pps = Config.get(sec, name, "rate")
    bps = Config.get(sec, name, "rate_bps")
    if pps is not None and bps is not None:
        raise UsageError(f"config: {name} has both rate and rate_bps")
    if bps is not None:
        if not mean_bits:
            raise UsageError(f"config: {name}.rate_bps needs a known mean packet size")
        return bps_to_pps(bps, mean_bits)
    if pps is None and required:
        raise UsageError(f"config: missing key {name}.rate")
    return pps


def _ds_flow(cfg: Config, seed: int, link_rate: float, unit_mode: bool):
    sec = cfg.section("ds")
    kind = Config.get(sec, "ds", "arrivals", str, "poisson")
    if kind in ("trace", "stadia"):
        if kind == "trace":
            recs = load_trace(cfg.path(Config.get(sec, "ds", "path", str, required=True)))
        else:
            res = Config.get(sec, "ds", "resolution", str, required=True)
            dur = Config.get(sec, "ds", "duration", float, 30.0)
            tseed = Config.get(sec, "ds", "trace_seed", int, seed)
            recs = stadia_trace(res, dur, tseed, link_rate)
        loop = Config.get(sec, "ds", "loop", bool, True)
        arrivals = TraceReplay(tuple(recs), loop=loop)
        sizes = _size_model(sec, "ds", unit_mode, default="empirical")
        return arrivals, sizes
    sizes = _size_model(sec, "ds", unit_mode)
    bits = mean_size_bits(sizes) if not isinstance(sizes, Empirical) else None
    if kind == "poisson":
        return Poisson(_rate(sec, "ds", bits)), sizes
    if kind == "batch_poisson":
        arrivals = BatchPoisson(
            batch_rate=Config.get(sec, "ds", "batch_rate", required=True),
            batch_size=BatchSize(Config.get(sec, "ds", "batch_mean", float, 1.0),
                                 Config.get(sec, "ds", "batch_kind", str, "fixed")),
            intra_batch_gap=Config.get(sec, "ds", "intra_batch_gap", float, 10e-6),
            min_gap=Config.get(sec, "ds", "min_gap", float, 0.0),
        )
        return arrivals, sizes
    raise UsageError("config: ds.arrivals must be poisson, batch_poisson, trace or stadia")


def _nds_sizes(cfg: Config, unit_mode: bool, required: bool):
    sec = cfg.section("nds", required=required)
    if sec is None:
        return None, None
    sizes = _size_model(sec, "nds", unit_mode)
    if isinstance(sizes, Empirical):
        raise UsageError("config: nds.sizes cannot be empirical")
    return sec, sizes


def build_sim_config(cfg: Config, seed: int, sweep: bool = False) -> SimConfig:
    link_rate, unit_mode = _link_rate(cfg)
    ds_arr, ds_sizes = _ds_flow(cfg, seed, link_rate, unit_mode)
    sec, nds_sizes = _nds_sizes(cfg, unit_mode, required=sweep)
    nds_arr = None
    if sec is not None and not sweep:
        rate = _rate(sec, "nds", mean_size_bits(nds_sizes), required=False)
        if rate:
            nds_arr = Poisson(rate)
    rsec = cfg.section("run", required=False) or {}
    max_packets = Config.get(rsec, "run", "max_packets", int)
    max_time = Config.get(rsec, "run", "max_time", float)
    if max_packets is None and max_time is None and not sweep:
        max_packets = 1_000_000
    return SimConfig(
        link_rate=link_rate, ds_arrivals=ds_arr, ds_sizes=ds_sizes,
        nds_arrivals=nds_arr, nds_sizes=nds_sizes,
        max_packets=max_packets if max_packets or max_time else 1,
        max_time=max_time,
        warmup=Config.get(rsec, "run", "warmup", float, 0.1),
        seed=seed,
        max_queue=Config.get(rsec, "run", "max_queue", int, 10_000_000),
    )


def build_sweep_config(cfg: Config, nds_bits: float, workers: Optional[int]) -> SweepConfig:
    sec = cfg.section("sweep")
    unit = Config.get(sec, "sweep", "unit", str, "pps")
    if unit not in ("pps", "bps"):
        raise UsageError("config: sweep.unit must be pps or bps")
    scale = 1.0 / nds_bits if unit == "bps" else 1.0

    def rate(key, default=None, required=False):
        v = Config.get(sec, "sweep", key, float, default, required)
        return None if v is None else v * scale

    packets = Config.get(sec, "sweep", "packets_per_point", int)
    tpp = Config.get(sec, "sweep", "time_per_point", float)
    if packets is None and tpp is None:
        packets = 1_000_000
    return SweepConfig(
        stop=rate("stop", required=True),
        start=rate("start", 0.0),
        step=rate("step"),
        points=Config.get(sec, "sweep", "points", int),
        packets_per_point=packets,
        time_per_point=tpp,
        seed_stride=Config.get(sec, "sweep", "seed_stride", int, 1),
        workers=workers if workers else Config.get(sec, "sweep", "workers", int, 1),
    )


# -- subcommands ---------------------------------------------------------
# Each returns the list of files it wrote inside args.out.

def cmd_llr(args) -> List[str]:
    rows = []
    for cv in args.cv:
        svc = _service(args, cv)
        plus = qa.llr_limit(svc)
        for k in range(1, args.points + 1):
            ls = svc.mu * k / (args.points + 1)
            load = LinkLoad(ls)
            rows.append((float(cv), ls, qa.mean_delay(load, svc), qa.mean_packets(load, svc),
                         1.0 / ls, plus))
    path = "llr.csv"
    _write_csv(os.path.join(args.out, path),
               ["cs", "lambda_s", "mean_delay_s", "mean_packets", "one_over_lambda_s",
                "lambda_s_plus"], rows)
    for cv in args.cv:
        print(f"cs={cv:g} lambda_s_plus={qa.llr_limit(_service(args, cv)):.6g}")
    return [path]


def allocation(lambda_s: float, svc: ServiceModel, strategy: str = "both",
               mean_bits: Optional[float] = None) -> dict:
    lb_max = qa.max_alloc(lambda_s, svc)
    out = {
        "lambda_s": lambda_s,
        "lambda_s_plus": qa.llr_limit(svc),
        "mu": svc.mu,
        "cv": svc.cv,
        "beta": qa.beta(lambda_s, svc),
        "delay_at_zero": qa.mean_delay(LinkLoad(lambda_s), svc),
    }
    if strategy in ("max", "both"):
        out["max"] = lb_max
        out["kappa_plus"] = qa.kappa_plus(lambda_s, svc)
        out["delay_at_max"] = qa.mean_delay(LinkLoad(lambda_s, lb_max), svc)
    if strategy in ("pfll", "both"):
        lb_pf = qa.pfll_alloc(lambda_s, svc)
        out["pfll"] = lb_pf
        out["kappa_star"] = qa.kappa_star(lambda_s, svc)
        out["delay_at_pfll"] = qa.mean_delay(LinkLoad(lambda_s, lb_pf), svc)
    if mean_bits:
        for key in ("lambda_s", "lambda_s_plus", "max", "pfll"):
            if key in out:
                out[f"{key}_bps"] = pps_to_bps(out[key], mean_bits)
    return out


def cmd_allocate(args) -> List[str]:
    svc = _service(args, args.cv)
    bits = _mean_bits(args)
    if (args.lambda_s is None) == (args.lambda_s_bps is None):
        raise UsageError("give exactly one of --lambda-s or --lambda-s-bps")
    if args.lambda_s_bps is not None:
        if not bits:
            raise UsageError("--lambda-s-bps needs --link-rate and --mean-size")
        ls = bps_to_pps(args.lambda_s_bps, bits)
    else:
        ls = args.lambda_s
    out = allocation(ls, svc, args.strategy, bits)
    text = json.dumps(_clean(out), indent=2, sort_keys=True)
    print(text)
    _write_json(os.path.join(args.out, "allocation.json"), _clean(out))
    return ["allocation.json"]


def _summary_rows(res) -> list:
    rows = []
    for flow, name in ((DS, "DS"), (NDS, "NDS")):
        f = res.flow(flow)
        d = np.sort(f.delays)
        pct = [nearest_rank(d, p) if len(d) else math.nan for p in (0.5, 0.9, 0.99)]
        rows.append([name, f.n_arrived, f.n_delivered, len(d), res.mean_delay(flow),
                     res.mean_delay_se(flow), *pct, res.throughput(flow),
                     res.throughput_bps(flow), f.mean_iat])
    return rows


SUMMARY_HEADER = ["flow", "n_arrived", "n_delivered", "n_samples", "mean_delay_s",
                  "mean_delay_se_s", "p50_s", "p90_s", "p99_s", "throughput_pps",
                  "throughput_bps", "mean_iat_s"]


def cmd_simulate(args) -> List[str]:
    cfg = args._config
    sim = build_sim_config(cfg, args.seed)
    res = run(sim)
    files = ["summary.csv"]
    _write_csv(os.path.join(args.out, "summary.csv"), SUMMARY_HEADER, _summary_rows(res))
    if args.packets:
        export_packets(res, os.path.join(args.out, "packets.csv"))
        files.append("packets.csv")
    print(f"stop={res.stop_reason} duration={res.duration:.6g}s "
          f"ds_mean_delay={res.mean_delay(DS):.6g}s")
    return files


def cmd_sweep(args) -> List[str]:
    cfg = args._config
    base = build_sim_config(cfg, args.seed, sweep=True)
    bits = mean_size_bits(base.nds_sizes)
    sweep = build_sweep_config(cfg, bits, args.workers)
    report = empirical_pfll(base, sweep)
    res = cfg.section("ds").get("resolution")
    if res in STADIA_PFLL_REFERENCE:
        report.reference = {"pfll_bps": STADIA_PFLL_REFERENCE[res], "resolution": res}
    report.write_json(os.path.join(args.out, "report.json"))
    report.write_curves(os.path.join(args.out, "curves.csv"))
    files = ["report.json", "curves.csv"]
    if args.percentiles:
        rows = percentile_impact(base.replace(max_packets=sweep.packets_per_point,
                                              max_time=sweep.time_per_point),
                                 [0.0, report.empirical_pfll, report.empirical_max],
                                 seed_stride=sweep.seed_stride)
        _write_csv(os.path.join(args.out, "percentiles.csv"),
                   ["lambda_b", "p50_s", "p90_s", "p99_s", "mean_delay_s"],
                   [[r["lambda_b"], r["p50"], r["p90"], r["p99"], r["mean"]] for r in rows])
        files.append("percentiles.csv")
    print(f"empirical_max={report.empirical_max:.6g} pkt/s "
          f"({report.empirical_max * bits:.6g} b/s)")
    print(f"empirical_pfll={report.empirical_pfll:.6g} pkt/s "
          f"({report.empirical_pfll * bits:.6g} b/s) argmax_g={report.argmax_g:.6g}")
    for w in report.warnings:
        print(f"warning: {w}")
    return files


def cmd_trace_stats(args) -> List[str]:
    recs = load_trace(args.trace)
    st = trace_stats(recs, args.link_rate, args.batch_gap)
    d = st.to_dict()
    d["load_mbps"] = st.load / 1e6
    d["mean_iat_ms"] = st.mean_iat * 1e3
    _write_json(os.path.join(args.out, "trace_stats.json"), _clean(d))
    print(json.dumps(_clean(d), indent=2, sort_keys=True))
    return ["trace_stats.json"]


def cmd_synth_trace(args) -> List[str]:
    recs = stadia_trace(args.resolution, args.duration, args.seed, args.link_rate)
    name = f"stadia_{args.resolution}.csv"
    write_trace(recs, os.path.join(args.out, name))
    print(f"{len(recs)} packets written to {name}")
    return [name]


def _lambda_s_grid(limit: float, mu: float, step: float, inclusive: bool) -> np.ndarray:
    n = int(math.floor(limit / (step * mu) + 1e-9))
    g = step * mu * np.arange(1, n + 1)
    g = g[g <= limit] if inclusive else g[g < limit]
    if inclusive and (len(g) == 0 or g[-1] < limit):
        g = np.append(g, limit)
    return g


def _delay_derivative(ls: float, lb: float, svc: ServiceModel) -> float:
    lam = ls + lb
    mu = svc.mu
    return (svc.theta - 1.0) / mu / (mu - lam) + qa.gamma_ratio(lam, svc) / (mu - lam) ** 2


def _df(ls: float, lb: float, svc: ServiceModel, d_plus: float) -> float:
    d = qa.mean_delay(LinkLoad(ls, lb), svc)
    return d_plus - d - lb * _delay_derivative(ls, lb, svc)


def figure_tables(fig: int, mu: float = 1.0) -> Dict[str, tuple]:
    """Analytic data behind one figure: {file name: (header, rows)}."""
    step = 0.005
    out: Dict[str, tuple] = {}
    if fig == 2:
        a, b = [], []
        for cv in FIGURE_CVS:
            svc = ServiceModel.from_rate(mu, cv)
            plus = qa.llr_limit(svc)
            for k in range(1, 200):
                ls = mu * k / 200
                load = LinkLoad(ls)
                a.append((cv, ls, qa.mean_delay(load, svc), 1.0 / ls, plus))
                b.append((cv, ls, qa.mean_packets(load, svc), plus))
        out["fig2a.csv"] = (("cs", "lambda_s", "mean_delay_s", "one_over_lambda_s",
                             "lambda_s_plus"), a)
        out["fig2b.csv"] = (("cs", "lambda_s", "mean_packets", "lambda_s_plus"), b)
    elif fig == 3:
        rows = []
        for cv in FIGURE_CVS:
            svc = ServiceModel.from_rate(mu, cv)
            for ls in _lambda_s_grid(qa.llr_limit(svc), mu, step, inclusive=True):
                rows.append((cv, ls, qa.pfll_alloc(ls, svc), qa.max_alloc(ls, svc),
                             qa.kappa_star(ls, svc), qa.kappa_plus(ls, svc)))
        out["fig3.csv"] = (("cs", "lambda_s", "pfll", "max", "kappa_star", "kappa_plus"), rows)
    elif fig == 4:
        a, b = [], []
        for cv in FIGURE_CVS:
            svc = ServiceModel.from_rate(mu, cv)
            for ls in _lambda_s_grid(qa.llr_limit(svc), mu, step, inclusive=False):
                dr, tr = compare_strategies(ls, svc)
                a.append((cv, ls, dr))
                b.append((cv, ls, tr))
        out["fig4a.csv"] = (("cs", "lambda_s", "delay_ratio"), a)
        out["fig4b.csv"] = (("cs", "lambda_s", "throughput_ratio"), b)
    elif fig == 5:
        a, b, c = [], [], []
        for ls_rel, cv in FIG5_PAIRS:
            svc = ServiceModel.from_rate(mu, cv)
            ls = ls_rel * mu
            grid = qa.allocation_grid(ls, svc, 1e-3 * mu)
            gh = qa.normalize_curve(qa.g_curve(ls, svc, grid)).values
            fh = qa.normalize_curve(qa.f_curve(ls, svc, grid)).values
            top = qa.max_alloc(ls, svc)
            d_plus = qa.mean_delay(LinkLoad(ls, top), svc)
            for x, g, f in zip(grid, gh, fh):
                a.append((cv, ls, x, g, f))
                if x < top:
                    b.append((cv, ls, x, qa.gain_derivative(LinkLoad(ls, x), svc),
                              _df(ls, x, svc, d_plus)))
            # both argmaxes as roots of the derivatives, printed to 9 digits
            hi = top * (1 - 1e-9)
            xg = brentq(lambda x: qa.gain_derivative(LinkLoad(ls, x), svc), 0.0, hi, xtol=1e-14)
            xf = brentq(lambda x: _df(ls, x, svc, d_plus), 0.0, hi, xtol=1e-14)
            c.append((cv, ls, f"{xg:.9g}", f"{xf:.9g}", qa.pfll_alloc(ls, svc)))
        out["fig5a.csv"] = (("cs", "lambda_s", "lambda_b", "g_hat", "f_hat"), a)
        out["fig5b.csv"] = (("cs", "lambda_s", "lambda_b", "dg", "df"), b)
        out["fig5_argmax.csv"] = (("cs", "lambda_s", "argmax_g", "argmax_f", "pfll"), c)
    else:
        raise UsageError(f"unknown figure {fig}; choose 2, 3, 4 or 5")
    return out


def cmd_figures(args) -> List[str]:
    files = []
    for name, (header, rows) in figure_tables(args.figure, args.mu).items():
        _write_csv(os.path.join(args.out, name), header, rows)
        files.append(name)
    print("wrote " + ", ".join(files))
    return files


# -- manifest ------------------------------------------------------------

def _seeds(args) -> dict:
    s = getattr(args, "seed", None)
    return {} if s is None else {"seed": s}


def write_manifest(args, files: List[str], wall: float) -> str:
    params = {k: v for k, v in vars(args).items()
              if not k.startswith("_") and k not in ("func", "out")}
    cfg = getattr(args, "_config", None)
    man = {
        "subcommand": args.command,
        "params": params,
        "config": None if cfg is None else cfg.data,
        "config_dir": None if cfg is None else cfg.base_dir,
        "seeds": _seeds(args),
        "version": __version__,
        "out_dir": os.path.abspath(args.out),
        "outputs": files,
        "wall_clock_s": round(wall, 6),
    }
    path = os.path.join(args.out, MANIFEST)
    _write_json(path, _clean(man))
    return path


def _namespace_from_manifest(path: str, out: Optional[str]) -> argparse.Namespace:
    try:
        with open(path, encoding="utf-8") as fh:
            man = json.load(fh)
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot read manifest {path}: {e}") from None
    cmd = man.get("subcommand")
    if cmd not in COMMANDS:
        raise UsageError(f"manifest names unknown subcommand {cmd!r}")
    ns = argparse.Namespace(**man["params"])
    ns.command = cmd
    ns.func = COMMANDS[cmd]
    ns.out = out or man["out_dir"]
    if man.get("config") is not None:
        ns._config = Config(man["config"], man["config_dir"])
    return ns


# -- argument parsing ----------------------------------------------------

def _add_service(p):
    p.add_argument("--mu", type=float, help="service rate, packets/s")
    p.add_argument("--link-rate", type=float, help="link rate, bits/s (with --mean-size)")
    p.add_argument("--mean-size", type=float, help="mean packet size, bits")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="llrlink", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"llrlink {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("-o", "--out", default=".", help="output directory (default: .)")
        return p

    p = add("llr", "mean DS delay and packets in the link vs lambda_s")
    _add_service(p)
    p.add_argument("--cv", type=float, nargs="+", default=[1.0], help="service-time CVs")
    p.add_argument("--points", type=int, default=199, help="lambda_s grid points in (0, mu)")

    p = add("allocate", "analytic max and PFLL NDS allocations")
    _add_service(p)
    p.add_argument("--lambda-s", type=float, help="DS rate, packets/s")
    p.add_argument("--lambda-s-bps", type=float, help="DS rate, bits/s")
    p.add_argument("--cv", type=float, default=1.0)
    p.add_argument("--strategy", choices=("max", "pfll", "both"), default="both")

    p = add("simulate", "run one simulation from a TOML config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--packets", action="store_true", help="also write per-packet CSV")

    p = add("sweep", "empirical max and PFLL allocations from a TOML config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--percentiles", action="store_true",
                   help="also tabulate DS delay percentiles at 0, PFLL and max")

    p = add("trace-stats", "load, gap, size and batch statistics of a packet trace")
    p.add_argument("trace")
    p.add_argument("--link-rate", type=float, default=100e6, help="bits/s")
    p.add_argument("--batch-gap", type=float, default=DEFAULT_BATCH_GAP,
                   help="gap below which packets join a batch, seconds")

    p = add("synth-trace", "write a synthetic cloud-gaming trace")
    p.add_argument("resolution", choices=sorted(STADIA_TABLE))
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--link-rate", type=float, default=100e6)

    p = add("figures", "analytic figure data as CSV")
    p.add_argument("--figure", type=int, required=True)
    p.add_argument("--mu", type=float, default=1.0)

    p = sub.add_parser("rerun", help="replay a manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", default=None, help="write outputs here instead")
    return ap


COMMANDS: Dict[str, Callable] = {
    "llr": cmd_llr,
    "allocate": cmd_allocate,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "trace-stats": cmd_trace_stats,
    "synth-trace": cmd_synth_trace,
    "figures": cmd_figures,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            args = _namespace_from_manifest(args.manifest, args.out)
        elif args.command in ("simulate", "sweep"):
            args._config = Config.load(args.config)
        args.func = COMMANDS[args.command]
        os.makedirs(args.out, exist_ok=True)
        t0 = time.perf_counter()
        files = args.func(args)
        write_manifest(args, files, time.perf_counter() - t0)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"llrlink: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SimulationAbort, UnstableLinkError) as e:
        msg = str(e)
        prefix = "" if msg.startswith("unstable") else "unstable: "
        print(f"llrlink: {prefix}{msg}", file=sys.stderr)
        return EXIT_UNSTABLE
    except LLRError as e:
        print(f"llrlink: error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
