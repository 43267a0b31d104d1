"""Command-line entry point ``laplace-deconv``.

Commands
--------
fit-kernel  Laguerre expansion of a sampled arterial input function.
fit         Penalized deconvolution of a concentration curve.
simulate    Monte-Carlo risk table over a grid of scenarios.
compare     Laguerre estimator against oracle-tuned Tikhonov and truncated SVD.
rerun       Repeat any command from the config embedded in one of its outputs.

Every JSON output carries ``config`` (the fully resolved settings) and
``version``.  Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .baseline import compare_methods, example_estimates
from .design import Observations, shift_delay
from .errors import DeconvolutionError, NumericalError, RankDeficientDesign, ValidationError
from .laguerre import (DEFAULT_A_GRID, CoeffVector, LaguerreBasis, least_squares_coefficients,
                       select_scale_a)
from .select import EstimatorConfig, fit as fit_model
from .simulate import Scenario, monte_carlo

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("laplace_deconv")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

SIMULATION_KEYS = {"kernel", "target", "snr", "n", "T", "reps", "seed", "sigma", "sigma_form"}
ESTIMATOR_KEYS = {"a", "M", "B", "c_pen", "alpha", "alpha_range", "refit_per_m"}
GRID_KEYS = ("kernel", "target", "snr", "n")


# ---------------------------------------------------------------- file formats

@dataclass(frozen=True)
class Series:
    """Raw ``t,value`` samples (``t = 0`` allowed)."""

    times: np.ndarray
    values: np.ndarray


def read_series(path):
    """Read a CSV with header ``t,value``; errors name the offending line."""
    times, values = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "value"]:
            raise ValidationError(f"{path}:1: expected header 't,value', got {header!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}:{line}: expected 2 fields, got {len(row)}")
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError:
                raise ValidationError(f"{path}:{line}: non-numeric entry {row!r}") from None
            if not (math.isfinite(t) and math.isfinite(v)):
                raise ValidationError(f"{path}:{line}: non-finite entry {row!r}")
            if times and t <= times[-1]:
                raise ValidationError(f"{path}:{line}: times must be strictly increasing")
            if t < 0:
                raise ValidationError(f"{path}:{line}: negative time {t}")
            times.append(t)
            values.append(v)
    return Series(np.array(times), np.array(values))


def write_series(path, times, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(times, values):
            w.writerow([repr(float(t)), repr(float(v))])


def read_observations(path, horizon=None):
    s = read_series(path)
    return Observations(s.times, s.values, horizon)


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_kernel(path):
    """Kernel file written by ``fit-kernel``: ``{a, M, coeffs, fit_rmse}``."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as err:
        raise ValidationError(f"{path}: not valid JSON ({err})") from None
    missing = [k for k in ("a", "M", "coeffs") if k not in d]
    if missing:
        raise ValidationError(f"{path}: kernel file lacks {', '.join(missing)}")
    return CoeffVector(np.asarray(d["coeffs"], dtype=float), LaguerreBasis(d["a"], d["M"]))


def envelope(command, config, **payload):
    return {"command": command, "config": config, "version": __version__, **payload}


def _prepare_out(out):
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------- scenarios

def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def load_scenario_file(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise ValidationError(f"{path}: {err}") from None


def expand_scenarios(doc, overrides=None):
    """Cells of a scenario document, validated all at once.

    ``[simulation]`` may give lists for kernel, target, snr and n; the cells
    are their Cartesian product.  ``[estimator]`` applies to every cell.
    Raises a single :class:`ValidationError` listing every problem found.
    """
    problems = []
    unknown_sections = set(doc) - {"simulation", "estimator"}
    for s in sorted(unknown_sections):
        problems.append(f"[{s}]: unknown section")
    sim = dict(doc.get("simulation", {}))
    est = dict(doc.get("estimator", {}))
    for k in sorted(set(sim) - SIMULATION_KEYS):
        problems.append(f"simulation.{k}: unknown field")
    for k in sorted(set(est) - ESTIMATOR_KEYS):
        problems.append(f"estimator.{k}: unknown field")
    for k, v in (overrides or {}).items():
        if v is not None:
            (est if k in ESTIMATOR_KEYS else sim)[k] = v
    base = {k: v for k, v in sim.items() if k in SIMULATION_KEYS and k not in GRID_KEYS}
    base.update({k: v for k, v in est.items() if k in ESTIMATOR_KEYS})
    if "alpha" in base and base["alpha"] == "auto":
        base["alpha"] = None
    grids = [_as_list(sim.get(k, getattr(Scenario, k))) for k in GRID_KEYS]
    cells = []
    seen = set()
    for combo in itertools.product(*grids):
        kw = dict(base, **dict(zip(GRID_KEYS, combo)))
        try:
            Scenario(**kw)
            errs = []
        except ValidationError as err:
            errs = getattr(err, "problems", [str(err)])
        for e in errs:
            if e not in seen:
                seen.add(e)
                problems.append(e)
        if not errs:
            cells.append(kw)
    if problems:
        raise ValidationError("invalid scenario:\n  " + "\n  ".join(problems))
    return [Scenario(**kw) for kw in cells]


def table_layout(reports):
    """Risk table in rows of (snr, kernel) and columns of (n, target)."""
    ns = sorted({r.scenario.n for r in reports})
    targets = sorted({r.scenario.target for r in reports})
    cols = [f"n{n}_{f}" for n in ns for f in targets]
    rows = {}
    for r in reports:
        key = (r.scenario.snr, r.scenario.kernel)
        rows.setdefault(key, {})[f"n{r.scenario.n}_{r.scenario.target}"] = r.risk_x100
    header = ["snr", "kernel"] + cols
    body = [[snr, kern] + [rows[(snr, kern)].get(c, "") for c in cols]
            for (snr, kern) in sorted(rows, key=lambda k: (k[0], k[1]))]
    return header, body


# ---------------------------------------------------------------- commands

def cmd_fit_kernel(cfg, out):
    series = read_series(cfg["data"])
    M = cfg["M"]
    if series.times.size < M + 1:
        raise RankDeficientDesign(
            f"{series.times.size} kernel samples cannot determine {M} coefficients (need at least {M + 1})")
    if cfg["a"] == "auto":
        a, _ = select_scale_a(series, M, cfg["a_grid"])
    else:
        a = float(cfg["a"])
    coeffs, rmse = least_squares_coefficients(LaguerreBasis(a, M), series.times, series.values)
    out = _prepare_out(out)
    payload = envelope("fit-kernel", cfg, a=a, M=M, coeffs=[float(c) for c in coeffs.coeffs],
                       fit_rmse=rmse)
    write_json(os.path.join(out, "kernel.json"), payload)
    return payload


def cmd_fit(cfg, out):
    g = read_kernel(cfg["kernel"])
    obs = read_observations(cfg["data"])
    if cfg["delay"]:
        obs = shift_delay(obs, cfg["delay"])
    if cfg["M"] > len(g):
        raise ValidationError(f"M={cfg['M']} exceeds the {len(g)} coefficients in {cfg['kernel']}")
    config = EstimatorConfig(M=cfg["M"], B=cfg["B"], c_pen=cfg["c_pen"], alpha=cfg["alpha"],
                             alpha_range=tuple(cfg["alpha_range"]))
    res = fit_model(obs, g, config, sigma=cfg["sigma"])
    out = _prepare_out(out)
    payload = envelope(
        "fit", cfg,
        m_hat=res.m_hat, coeffs=[float(c) for c in res.coeffs.coeffs], a=res.basis.a,
        beta_hat=res.beta_hat, transit_integral=res.transit_integral, sigma_used=res.sigma_used,
        alpha=res.table.alpha, penalty_table=res.table.records())
    write_json(os.path.join(out, "fit.json"), payload)
    write_rows(os.path.join(out, "curves.csv"), ["t", "y", "f_hat", "q_hat"],
               zip(obs.times, obs.values, res(obs.times), res.fitted_convolution(obs.times)))
    return payload


def cmd_simulate(cfg, out):
    scenarios = expand_scenarios(cfg["scenario"], cfg["overrides"])
    start = time.perf_counter()
    reports = [monte_carlo(s) for s in scenarios]
    log.info("simulated %d cells in %.1fs", len(reports), time.perf_counter() - start)
    out = _prepare_out(out)
    cells = [r.to_dict() for r in reports]
    header, body = table_layout(reports)
    payload = envelope("simulate", cfg, cells=cells, table={"header": header, "rows": body})
    write_json(os.path.join(out, "risk.json"), payload)
    write_rows(os.path.join(out, "risk_table.csv"), header, body)
    tidy = [[r.scenario.kernel, r.scenario.target, r.scenario.snr, r.scenario.n, r.risk_x100,
             100 * r.std_error, 100 * r.oracle_risk, r.a, r.sigma, r.alpha] for r in reports]
    write_rows(os.path.join(out, "risk_cells.csv"),
               ["kernel", "target", "snr", "n", "risk_x100", "se_x100", "oracle_x100", "a", "sigma",
                "alpha"], tidy)
    return payload


def cmd_compare(cfg, out):
    scenarios = expand_scenarios(cfg["scenario"], cfg["overrides"])
    comps = [compare_methods(s, rule=cfg["rule"]) for s in scenarios]
    out = _prepare_out(out)
    rows = [[c.laguerre.scenario.kernel, c.laguerre.scenario.target, c.laguerre.scenario.snr,
             c.laguerre.scenario.n, c.laguerre.mean_risk, c.tikhonov.best_risk, c.tikhonov.best_param,
             c.tsvd.best_risk, c.tsvd.best_param] for c in comps]
    payload = envelope("compare", cfg, cells=[c.to_dict() for c in comps])
    write_json(os.path.join(out, "compare.json"), payload)
    write_rows(os.path.join(out, "compare.csv"),
               ["kernel", "target", "snr", "n", "laguerre_risk", "tikhonov_risk", "tikhonov_lambda",
                "tsvd_risk", "tsvd_tau"], rows)
    est = example_estimates(scenarios[0], comps[0])
    write_rows(os.path.join(out, "estimates.csv"), list(est),
               zip(*[np.asarray(v) for v in est.values()]))
    return payload


COMMANDS = {"fit-kernel": cmd_fit_kernel, "fit": cmd_fit, "simulate": cmd_simulate,
            "compare": cmd_compare}


# ---------------------------------------------------------------- argument parsing

def _real_or(word):
    def parse(text):
        if text == word:
            return word
        try:
            return float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number or '{word}', got {text!r}") from None
    parse.__name__ = f"real|{word}"
    return parse


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _a_grid(text):
    try:
        lo, hi, count = text.split(",")
        return [float(v) for v in np.geomspace(float(lo), float(hi), int(count))]
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'lo,hi,count'") from None


def build_parser():
    p = argparse.ArgumentParser(prog="laplace-deconv",
                                description="Laplace deconvolution with Laguerre functions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def estimator_flags(sp, scenario):
        sp.add_argument("--M", type=int, default=None if scenario else 11)
        sp.add_argument("--B", type=float, default=None if scenario else 0.5)
        sp.add_argument("--c-pen", dest="c_pen", type=float, default=None if scenario else 1.5)
        sp.add_argument("--alpha", type=_real_or("auto"), default=None if scenario else "auto")
        if not scenario:
            sp.add_argument("--alpha-range", dest="alpha_range", type=int, nargs=2, default=[1, 7],
                            metavar=("LO", "HI"))

    sp = sub.add_parser("fit-kernel", help="Laguerre coefficients of a sampled kernel")
    sp.add_argument("--data", required=True, help="CSV with header t,value")
    sp.add_argument("--M", type=int, default=11)
    sp.add_argument("--a", type=_real_or("auto"), default="auto")
    sp.add_argument("--a-grid", dest="a_grid", type=_a_grid, default=None,
                    help="candidate scales as lo,hi,count (geometric)")
    sp.add_argument("--out", default=".")

    sp = sub.add_parser("fit", help="deconvolve a concentration curve")
    sp.add_argument("--data", required=True, help="CSV with header t,value")
    sp.add_argument("--kernel", required=True, help="kernel JSON from fit-kernel")
    estimator_flags(sp, scenario=False)
    sp.add_argument("--sigma", type=_real_or("estimate"), default="estimate")
    sp.add_argument("--delay", type=float, default=0.0)
    sp.add_argument("--out", default=".")

    for name, helptext in (("simulate", "Monte-Carlo risk table"),
                           ("compare", "Laguerre versus Tikhonov and truncated SVD")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("scenario", help="TOML scenario file")
        sp.add_argument("--a", type=_real_or("auto"), default=None)
        estimator_flags(sp, scenario=True)
        sp.add_argument("--sigma", type=float, default=None, help="override the SNR calibration")
        sp.add_argument("--seed", type=_u64, default=None)
        sp.add_argument("--reps", type=int, default=None)
        sp.add_argument("--out", default=".")
        if name == "compare":
            sp.add_argument("--rule", choices=("rectangular", "trapezoid"), default="rectangular")

    sp = sub.add_parser("rerun", help="repeat a command from an output file's embedded config")
    sp.add_argument("report", help="JSON output of an earlier run")
    sp.add_argument("--out", default=None, help="output directory (default: next to the report)")
    return p


def resolve_config(args):
    """Turn parsed arguments into the self-contained config stored in outputs."""
    cmd = args.command
    if cmd == "fit-kernel":
        grid = args.a_grid if args.a_grid is not None else [float(v) for v in DEFAULT_A_GRID]
        return {"data": os.path.abspath(args.data), "M": args.M, "a": args.a, "a_grid": grid}
    if cmd == "fit":
        return {"data": os.path.abspath(args.data), "kernel": os.path.abspath(args.kernel),
                "M": args.M, "B": args.B, "c_pen": args.c_pen,
                "alpha": None if args.alpha == "auto" else args.alpha,
                "alpha_range": list(args.alpha_range), "sigma": args.sigma, "delay": args.delay}
    doc = load_scenario_file(args.scenario)
    overrides = {"a": args.a, "M": args.M, "B": args.B, "c_pen": args.c_pen,
                 "alpha": args.alpha, "sigma": args.sigma, "seed": args.seed, "reps": args.reps}
    cfg = {"scenario": doc, "scenario_file": os.path.abspath(args.scenario),
           "overrides": {k: v for k, v in overrides.items() if v is not None}}
    if cmd == "compare":
        cfg["rule"] = args.rule
    return cfg


def run(command, cfg, out="."):
    return COMMANDS[command](cfg, out)


def rerun(path, out=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise ValidationError(f"{path}: not valid JSON ({err})") from None
    if doc.get("command") not in COMMANDS or "config" not in doc:
        raise ValidationError(f"{path}: no embedded command/config")
    if doc.get("version") != __version__:
        log.warning("output written by version %s, running %s", doc.get("version"), __version__)
    return run(doc["command"], doc["config"], os.path.dirname(os.path.abspath(path)) if out is None else out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            rerun(args.report, args.out)
        else:
            run(args.command, resolve_config(args), args.out)
    except (ValidationError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DeconvolutionError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
