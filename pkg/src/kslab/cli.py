"""Command line entry point.

``kslab <kind> --config PATH [--jobs N] [--out DIR]`` runs an experiment,
``kslab validate --config PATH`` checks a configuration and
``kslab plot --csv PATH --out FILE.svg`` renders a result table.
Exit status is 0 iff the summary says PASS (simulation kinds: on completion).
"""
from __future__ import annotations

import argparse
import os
import platform
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np
import scipy

from . import __version__, _kernels
from . import harness as H
from .config import KINDS, SCHEMA, ConfigError, load_config, serialize
from .families import gaussian_bump, maxwellian, perturbed, two_stream
from .hartree import HartreeState, solve_hartree
from .io import fmt, read_csv, write_csv
from .phase_space import InteractionKernel, PhaseGrid
from .plot import emit_plot, envelope_plot, rate_plot
from .quantum import wick_quantize
from .vlasov import VlasovState, flip_velocity, solve_vlasov

ENVELOPE_COLS = [("t", "time"), ("metric", "1"), ("bound", "1"), ("lambda", "1/time"),
                 ("verdict", "PASS|FAIL")]


# builders (module level so that they pickle for --jobs) --------------------------

def build_kernel(grid, spec):
    kind = spec["type"]
    sign = spec.get("sign", 1)
    if kind == "regularized_coulomb":
        return InteractionKernel.regularized_coulomb(grid, spec["eps"], sign)
    if kind == "gaussian":
        return InteractionKernel.gaussian(grid, spec["sigma"], sign, spec.get("amplitude", 1.0))
    if kind == "zero":
        return InteractionKernel.zero(grid)
    if kind == "coulomb1d":
        return InteractionKernel.coulomb1d(grid, sign)
    if kind == "harmonic":
        return InteractionKernel.harmonic(grid, spec.get("omega", 1.0), sign)
    raise ValueError(f"unknown kernel {kind!r}")


def build_initial(grid, spec):
    fam = spec["family"]
    mass = spec.get("mass", 1.0)
    temp = spec.get("temperature")
    if fam == "maxwellian":
        return maxwellian(grid, mass, 1.0 if temp is None else temp)
    if fam == "gaussian_bump":
        return gaussian_bump(grid, spec.get("center", (0.0, 0.0)), spec.get("widths", (1.0, 1.0)),
                             mass)
    if fam == "two_stream":
        return two_stream(grid, spec.get("separation", 2.0), 0.25 if temp is None else temp, mass)
    if fam == "perturbed":
        base = build_initial(grid, dict(spec, family=spec.get("base", "maxwellian")))
        return perturbed(base, spec.get("mode", 1), spec.get("amplitude", 0.01))
    raise ValueError(f"unknown family {fam!r}")


def _section(cfg, name):
    out = {}
    for key in SCHEMA:
        if key.startswith(name + "."):
            v = cfg[key]
            if v is not None:
                out[key.split(".", 1)[1]] = v
    return out


def _classical_grid(cfg):
    return PhaseGrid(cfg["grid.n_x"], cfg["grid.n_v"], cfg["grid.length"], cfg["grid.v_max"])


# experiments ----------------------------------------------------------------------

class Outcome:
    """What an experiment produced: files to write and the summary lines."""

    def __init__(self, passed, summary, tables, plots, simulation=False):
        self.passed = passed
        self.summary = summary
        self.tables = tables      # name -> (columns, rows)
        self.plots = plots        # name -> svg text
        self.simulation = simulation


def _pair(cfg):
    grid = _classical_grid(cfg)
    K = build_kernel(grid, _section(cfg, "kernel"))
    f2 = build_initial(grid, _section(cfg, "initial"))
    f1 = perturbed(f2, cfg["pair.mode"], cfg["pair.amplitude"])
    if cfg["pair.reverse"]:
        f1, f2 = flip_velocity(f1), flip_velocity(f2)
    return f1, f2, K


def _extras(env):
    return [f"{k} = {fmt(v)}" for k, v in sorted(env.extras.items())]


def run_l1(cfg, mapper):
    f1, f2, K = _pair(cfg)
    env = H.check_l1_stability(f1, f2, K, cfg["run.T"], cfg["run.constant"], cfg["run.dt"],
                               cfg["run.slack"], tuple(cfg["run.exponents"]), cfg["seed"])
    summary = [env.summary_line()] + _extras(env)
    return Outcome(env.verdict, summary, {"result.csv": (ENVELOPE_COLS, env.rows())},
                   {"envelope.svg": envelope_plot(env)})


def run_l2(cfg, mapper):
    f1, f2, K = _pair(cfg)
    main, cor = H.check_l2_stability(f1, f2, K, cfg["run.T"], cfg["run.constant"], cfg["run.dt"],
                                     cfg["run.slack"], tuple(cfg["run.exponents"]))
    ok = main.verdict and cor.verdict
    summary = [f"{'PASS' if ok else 'FAIL'}, {main.constant!r}, {main.slack!r}",
               f"sqrt_density: {main.summary_line()}", f"corollary: {cor.summary_line()}"]
    summary += _extras(main) + [f"ordering = {fmt(cor.extras['ordering'])}"]
    return Outcome(ok, summary, {"result.csv": (ENVELOPE_COLS, main.rows()),
                                 "corollary.csv": (ENVELOPE_COLS, cor.rows())},
                   {"envelope.svg": envelope_plot(main), "corollary.svg": envelope_plot(cor)})


def _sweep_args(cfg):
    hbars = tuple(cfg["quantum.hbars"])
    return hbars, dict(make_f=partial(build_initial, spec=_section(cfg, "initial")),
                       make_kernel=partial(build_kernel, spec=_section(cfg, "kernel")),
                       length=cfg["grid.length"], n_base=cfg["grid.n_x"], hbar_base=hbars[0])


def run_commutator(cfg, mapper):
    hbars, kw = _sweep_args(cfg)
    r = H.check_commutator_inequality(hbars=hbars, n_probes=cfg["run.probes"],
                                      eps=cfg["run.comm_eps"], mapper=mapper, **kw)
    ok = r.fit.within(0.8, 1.2) and r.ratio_slope >= -0.2
    cols = [("hbar", "action"), ("n_x", "1"), ("sup_commutator", "1"), ("rhs", "1"),
            ("ratio", "1")]
    rows = [(hb, int(round(cfg["grid.n_x"] * hbars[0] / hb)), s, q, s / q)
            for hb, s, q in zip(hbars, r.lhs.max(axis=1), r.rhs)]
    summary = [f"{'PASS' if ok else 'FAIL'}, {r.constant!r}, 0.0",
               f"slope = {fmt(r.fit.slope)} +- {fmt(r.fit.halfwidth)}",
               f"ratio_slope = {fmt(r.ratio_slope)}"]
    return Outcome(ok, summary, {"result.csv": (cols, rows)},
                   {"rate.svg": rate_plot(r.fit, "sup commutator norm")})


def run_rate(cfg, mapper):
    hbars, kw = _sweep_args(cfg)
    r = H.semiclassical_rate_study(hbars=hbars, T=cfg["run.T"], dt=cfg["run.dt"],
                                   record_every=cfg["run.every"], mapper=mapper, **kw)
    ok = r.trace.within(0.7, 1.3) and r.hs.within(0.7, 1.3) and r.fourier_ok
    cols = [("hbar", "action"), ("n_x", "1"), ("trace_distance", "1"), ("hs_distance", "1"),
            ("trace_distance_t0", "1"), ("hs_distance_t0", "1"), ("fourier_max", "1")]
    rows = []
    for hb in hbars:
        rec = r.records[hb]
        rows.append((hb, rec["n_x"], rec["trace"][-1], rec["hs"][-1], rec["trace"][0],
                     rec["hs"][0], max(rec["fourier"])))
    summary = [f"{'PASS' if ok else 'FAIL'}, {r.trace.slope!r}, 0.0",
               f"trace_slope = {fmt(r.trace.slope)} +- {fmt(r.trace.halfwidth)}",
               f"hs_slope = {fmt(r.hs.slope)} +- {fmt(r.hs.halfwidth)}",
               f"fourier_corollary = {'PASS' if r.fourier_ok else 'FAIL'}"]
    return Outcome(ok, summary, {"result.csv": (cols, rows)},
                   {"rate_trace.svg": rate_plot(r.trace, "trace distance"),
                    "rate_hs.svg": rate_plot(r.hs, "Hilbert-Schmidt distance")})


def run_wh(cfg, mapper):
    hb = cfg["quantum.hbar"]
    grid = PhaseGrid.for_hbar(cfg["grid.n_x"], cfg["grid.length"], hb)
    K = build_kernel(grid, _section(cfg, "kernel"))
    f0 = build_initial(grid, _section(cfg, "initial"))
    r = H.check_wh_stability(f0, K, cfg["run.T"], hb, cfg["run.dt"], cfg["run.slack"],
                             cfg["run.every"], control=cfg["run.control"])
    br = r.bracket
    ok = r.envelope.verdict and r.comparison_ok and (r.differential is None or
                                                      r.differential.verdict)
    summary = [f"{'PASS' if ok else 'FAIL'}, {r.fitted_c!r}, {r.envelope.slack!r}",
               f"envelope: {r.envelope.summary_line()}"]
    if r.differential is not None:
        summary.append(f"differential: {r.differential.summary_line()}")
    summary += [f"comparison: {'PASS' if r.comparison_ok else 'FAIL'}",
                f"marginal_density_gap = {fmt(float(r.marginal_error.max()))}",
                f"lower<=upper: {'PASS' if br.consistent() else 'FAIL'}, "
                f"{fmt(br.lower)}, {fmt(br.upper)}"]
    tables = {"result.csv": (ENVELOPE_COLS, r.envelope.rows()),
              "comparison.csv": ([("t", "time"), ("w2_upper_sq", "1"), ("cost_plus_dhbar", "1"),
                                  ("verdict", "PASS|FAIL")],
                                 [(t, a, b, "PASS" if v else "FAIL") for t, a, b, v in r.comparison])}
    if r.differential is not None:
        tables["differential.csv"] = (ENVELOPE_COLS, r.differential.rows())
    return Outcome(ok, summary, tables, {"envelope.svg": envelope_plot(r.envelope)})


def run_sim_vlasov(cfg, mapper):
    grid = _classical_grid(cfg)
    K = build_kernel(grid, _section(cfg, "kernel"))
    f0 = build_initial(grid, _section(cfg, "initial"))
    st, _ = solve_vlasov(VlasovState.start(f0, K, cfg["run.dt"]), cfg["run.T"])
    keys = ["t", "mass", "l2", "energy", "rho_inf"]
    cols = [("t", "time"), ("mass", "mass"), ("l2", "1"), ("energy", "energy"),
            ("rho_inf", "mass/length")]
    rows = [[d[k] for k in keys] for d in st.diagnostics]
    e0, e1 = rows[0][3], rows[-1][3]
    summary = ["COMPLETE", f"mass_drift = {fmt(abs(rows[-1][1] - rows[0][1]))}",
               f"energy_drift = {fmt(abs(e1 - e0) / max(abs(e0), 1e-300))}"]
    return Outcome(True, summary, {"result.csv": (cols, rows)}, {}, simulation=True)


def run_sim_hartree(cfg, mapper):
    hb = cfg["quantum.hbar"]
    grid = PhaseGrid.for_hbar(cfg["grid.n_x"], cfg["grid.length"], hb)
    K = build_kernel(grid, _section(cfg, "kernel"))
    f0 = build_initial(grid, _section(cfg, "initial"))
    op0 = wick_quantize(f0, hb)
    st, _ = solve_hartree(HartreeState.start(op0, K, cfg["run.dt"]), cfg["run.T"])
    keys = ["t", "trace", "l2", "energy", "diag_inf"]
    cols = [("t", "time"), ("trace", "mass"), ("l2", "1"), ("energy", "energy"),
            ("diag_inf", "mass/length")]
    rows = [[d[k] for k in keys] for d in st.diagnostics]
    summary = ["COMPLETE", f"trace_drift = {fmt(abs(rows[-1][1] - rows[0][1]))}"]
    return Outcome(True, summary, {"result.csv": (cols, rows)}, {}, simulation=True)


RUNNERS = {
    "l1_stability": run_l1,
    "l2_stability": run_l2,
    "commutator": run_commutator,
    "rate_study": run_rate,
    "wh_stability": run_wh,
    "simulate_vlasov": run_sim_vlasov,
    "simulate_hartree": run_sim_hartree,
}


def thread_cap():
    v = os.environ.get("KSLAB_THREADS")
    try:
        return max(1, int(v)) if v else None
    except ValueError:
        return None


def _meta(cfg, wall, jobs):
    return "\n".join([
        "# format_version = 1",
        f"kslab = {__version__}",
        f"kernels_backend = {_kernels.BACKEND}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        f"jobs = {jobs}",
        f"wall_time_s = {wall:.3f}",
        "",
        "# config",
        serialize(cfg),
    ])


def run_experiment(cfg, out_dir, jobs=1):
    """Run ``cfg`` and write its artifacts to ``out_dir``.

    Returns
    -------
    int
        0 on PASS (or completed simulation), 1 on FAIL, 2 on a solver error.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    cap = thread_cap()
    if cap:
        jobs = min(jobs, cap)
    t0 = time.perf_counter()
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        outcome = RUNNERS[cfg.kind](cfg, pool.map if pool else map)
    except Exception as exc:  # noqa: BLE001 - every solver error ends the run
        (out / "meta.txt").write_text(_meta(cfg, time.perf_counter() - t0, jobs), encoding="utf-8")
        failed.write_text(f"{type(exc).__name__}: {exc}\n\n{traceback.format_exc()}",
                          encoding="utf-8")
        print(f"kslab: {cfg.kind} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    finally:
        if pool:
            pool.shutdown()
    for name, (cols, rows) in outcome.tables.items():
        write_csv(out / name, cols, rows)
    for name, svg in outcome.plots.items():
        (out / name).write_text(svg, encoding="utf-8")
    (out / "summary.txt").write_text("\n".join(outcome.summary) + "\n", encoding="utf-8")
    (out / "meta.txt").write_text(_meta(cfg, time.perf_counter() - t0, jobs), encoding="utf-8")
    if not outcome.passed:
        failed.write_text("verdict FAIL\n", encoding="utf-8")
    print(outcome.summary[0])
    return 0 if outcome.passed else 1


# plot subcommand ------------------------------------------------------------------

def plot_csv(path):
    """SVG for a result table: log-log sweep, envelope overlay or plain series."""
    cols, rows, _ = read_csv(path)
    names = [c[0] for c in cols]
    data = {n: np.array([r[i] for r in rows], dtype=object) for i, n in enumerate(names)}

    def num(n):
        return np.array(data[n], dtype=float)

    if names and names[0] == "hbar":
        metric = next(n for n in names[2:] if n != "n_x")
        fit = H.fit_rate(num("hbar"), num(metric)) if len(rows) >= 4 else None
        series = [{"x": num("hbar"), "y": num(n), "label": n} for n in names[2:]
                  if n not in ("n_x",)]
        return emit_plot(series, "loglog", Path(path).name, "hbar", metric,
                         fit=(fit.slope, fit.intercept) if fit else None)
    if "metric" in names and "bound" in names:
        m, b = num("metric"), num("bound")
        style = "semilogy" if np.all(m > 0) else "linear"
        return emit_plot([{"x": num("t"), "y": m, "label": "metric", "mode": "line"},
                          {"x": num("t"), "y": b, "label": "bound", "mode": "line"}],
                         style, Path(path).name, "t", "metric")
    x = num(names[0])
    series = [{"x": x, "y": num(n), "label": n, "mode": "line"} for n in names[1:]]
    return emit_plot(series, "linear", Path(path).name, names[0], "")


# entry point ----------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="kslab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind, help=f"run a {kind} experiment")
        s.add_argument("--config", required=True)
        s.add_argument("--jobs", type=int, default=1)
        s.add_argument("--out", default=None)
    v = sub.add_parser("validate", help="check a configuration file")
    v.add_argument("--config", required=True)
    q = sub.add_parser("plot", help="render a result CSV as SVG")
    q.add_argument("--csv", required=True)
    q.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "plot":
        try:
            svg = plot_csv(args.csv)
        except Exception as exc:  # noqa: BLE001
            print(f"kslab plot: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 2
        Path(args.out).write_text(svg, encoding="utf-8")
        return 0
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"kslab: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print(f"OK {cfg.kind}")
        return 0
    if cfg.kind != args.command:
        print(f"kslab: config kind {cfg.kind!r} does not match command {args.command!r}",
              file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("kslab: --jobs must be >= 1", file=sys.stderr)
        return 2
    out = args.out or os.path.join("kslab_out", cfg.kind)
    return run_experiment(cfg, out, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
