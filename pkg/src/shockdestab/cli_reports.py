"""Batch front end: configuration, dispatch, CSV/SVG/summary artifacts.

Configuration files are line based::

    # comment
    mode = search-k
    [model]
    flux = exponential
    weight = affine
    weight_params = 0.5
    [numerics]
    eps = 1e-3

Keys before the first header belong to ``[run]``.  Every key has a fixed
section, type and admissible range; anything else is rejected with the
offending line number.  Lists are comma separated.

Artifacts are assembled in a scratch directory next to the output
directory and moved into place only once the run has completed, so a
failed run leaves nothing behind.  Verdicts are recorded in
``summary.txt``; a negative verdict still exits 0.
"""

import argparse
import csv
import io
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

THREADS_ENV = "SHOCKDESTAB_MAX_THREADS"
MODES = ("profile", "functional", "search-k", "sweep-vplus", "simulate-scalar", "simulate-ns")


class ConfigError(ValueError):
    """Invalid configuration text; the message names the line and key."""


# -- schema --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Key:
    section: str
    kind: str            # float, int, str, floats, k-list, opt-float
    default: object
    check: Callable = None
    hint: str = ""
    choices: tuple = ()


def _pos(x):
    return x > 0


def _flux_names():
    from .flux_catalog import FLUXES
    return tuple(sorted(FLUXES))


def _weight_names():
    from .weights import WEIGHTS
    return tuple(sorted(WEIGHTS))


SCHEMA = {
    "mode": _Key("run", "str", "profile", choices=MODES),
    "seed": _Key("run", "int", 0, lambda v: v >= 0, "must be >= 0"),
    "threads": _Key("run", "int", 1, lambda v: v >= 1, "must be >= 1"),
    "model": _Key("model", "str", "scalar", choices=("scalar", "system")),
    "flux": _Key("model", "str", "exponential", choices=None),
    "weight": _Key("model", "str", "constant", choices=None),
    "weight_params": _Key("model", "floats", ()),
    "K": _Key("model", "k-list", "auto", _pos, "must be positive"),
    "K0": _Key("model", "float", 1.0, _pos, "must be positive"),
    "K_max": _Key("model", "float", 80.0, _pos, "must be positive"),
    "K_ratio": _Key("model", "float", 1.25, lambda v: v > 1.0, "must exceed 1"),
    "gamma": _Key("model", "float", 5.0 / 3.0, lambda v: v > 1.0, "must exceed 1"),
    "v_minus": _Key("model", "float", 1.0, _pos, "must be positive"),
    "u_minus": _Key("model", "float", 0.0, np.isfinite, "must be finite"),
    "v_plus": _Key("model", "floats", (0.2, 0.1, 0.05, 0.02, 0.01), _pos, "must be positive"),
    "eps": _Key("numerics", "float", 1e-3, lambda v: 0 < v <= 0.1, "must lie in (0, 0.1]"),
    "spacing_factor": _Key("numerics", "opt-float", None, _pos, "must be positive"),
    "cfl": _Key("numerics", "float", 0.4, lambda v: 0 < v <= 1.0, "must lie in (0, 1]"),
    "steps": _Key("numerics", "int", 5, lambda v: v >= 1, "must be >= 1"),
    "sample_every": _Key("numerics", "int", 1, lambda v: v >= 1, "must be >= 1"),
    "lipschitz": _Key("numerics", "float", 1.0, lambda v: v >= 0, "must be >= 0"),
    "n_rates": _Key("numerics", "int", 9, lambda v: v >= 2, "must be >= 2"),
    "n_grid": _Key("numerics", "int", 11, lambda v: v >= 3, "must be >= 3"),
    "delta": _Key("numerics", "opt-float", None, _pos, "must be positive"),
    "inner": _Key("numerics", "opt-float", None, _pos, "must be positive"),
    "window": _Key("numerics", "str", "auto", choices=("auto", "decay", "support")),
    "panels": _Key("numerics", "int", 4096, lambda v: v >= 16, "must be >= 16"),
    "n_random": _Key("numerics", "int", 0, lambda v: v >= 0, "must be >= 0"),
}
SECTIONS = ("run", "model", "numerics")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    seed: int
    threads: int
    model: str
    flux: str
    weight: str
    weight_params: tuple
    K: object
    K0: float
    K_max: float
    K_ratio: float
    gamma: float
    v_minus: float
    u_minus: float
    v_plus: tuple
    eps: float
    spacing_factor: object
    cfl: float
    steps: int
    sample_every: int
    lipschitz: float
    n_rates: int
    n_grid: int
    delta: object
    inner: object
    window: str
    panels: int
    n_random: int


def _convert(key, spec, raw, where):
    raw = raw.strip()
    bad = lambda why: ConfigError(f"{where}: key {key!r}: {why}")
    try:
        if spec.kind == "int":
            val = int(raw)
        elif spec.kind == "float":
            val = float(raw)
        elif spec.kind == "opt-float":
            val = None if raw.lower() == "none" else float(raw)
        elif spec.kind == "floats":
            val = tuple(float(t) for t in raw.split(",") if t.strip()) if raw else ()
        elif spec.kind == "k-list":
            val = "auto" if raw.lower() == "auto" else tuple(float(t) for t in raw.split(","))
        else:
            val = raw
    except ValueError:
        raise bad(f"cannot read {raw!r} as {spec.kind}") from None
    items = val if isinstance(val, tuple) else (val,)
    if spec.kind in ("float", "opt-float", "floats", "k-list"):
        for v in items:
            if isinstance(v, float) and not np.isfinite(v):
                raise bad(f"value {v!r} is not finite")
    choices = spec.choices
    if key == "flux":
        choices = _flux_names()
    elif key == "weight":
        choices = _weight_names()
    if choices and val not in choices:
        raise bad(f"{val!r} not in {list(choices)}")
    if spec.check is not None:
        for v in items:
            if v is None or v == "auto":
                continue
            if not spec.check(v):
                raise bad(f"value {v!r} out of range ({spec.hint})")
    if spec.kind in ("floats", "k-list") and isinstance(val, tuple) and key != "weight_params":
        if not val:
            raise bad("empty list")
    return val


def parse_config(text):
    """Parse configuration text into an ExperimentConfig (defaults filled)."""
    values = {}
    section = "run"
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ConfigError(f"line {n}: malformed section header {body!r}")
            section = body[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"line {n}: unknown section [{section}]")
            continue
        if "=" not in body:
            raise ConfigError(f"line {n}: expected 'key = value', got {body!r}")
        key, raw = (t.strip() for t in body.split("=", 1))
        spec = SCHEMA.get(key)
        if spec is None:
            raise ConfigError(f"line {n}: key {key!r}: unknown key")
        if spec.section != section:
            raise ConfigError(f"line {n}: key {key!r}: belongs in [{spec.section}]")
        if key in values:
            raise ConfigError(f"line {n}: key {key!r}: given twice")
        values[key] = _convert(key, spec, raw, f"line {n}")
    for key, spec in SCHEMA.items():
        values.setdefault(key, spec.default)
    cfg = ExperimentConfig(**values)
    _cross_check(cfg)
    return cfg


def _cross_check(cfg):
    if cfg.K_max <= cfg.K0:
        raise ConfigError("key 'K_max': must exceed K0")
    for v in cfg.v_plus:
        if not v < cfg.v_minus:
            raise ConfigError(f"key 'v_plus': value {v!r} must be below v_minus")
    try:
        from .weights import get_weight
        get_weight(cfg.weight, *cfg.weight_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key 'weight_params': {exc}") from None


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(_fmt(t) for t in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg):
    """Normalized text form; parse_config(dump_config(c)) == c."""
    out = []
    for sec in SECTIONS:
        if sec != "run":
            out.append(f"[{sec}]")
        for key, spec in SCHEMA.items():
            if spec.section == sec:
                out.append(f"{key} = {_fmt(getattr(cfg, key))}")
    return "\n".join(out) + "\n"


# -- artifacts -----------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    """CSV with a header and a fixed column count; floats in round-trip form."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        if len(r) != len(header):
            raise ValueError("row width differs from header")
        wr.writerow([_cell(v) for v in r])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def write_summary(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items:
            fh.write(f"{k} = {_cell(v)}\n")


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
           "#7f7f7f", "#bcbd22", "#e377c2", "#000000")


def svg_line_plot(series, title="", xlabel="", ylabel="", logx=False, width=640, height=400):
    """Line plot as SVG text.  ``series`` maps a label to (x, y) arrays."""
    ml, mr, mt, mb = 70, 150, 30, 50
    pw, ph = width - ml - mr, height - mt - mb
    tx = (lambda a: np.log10(a)) if logx else (lambda a: a)
    xs = [tx(np.asarray(x, dtype=float)) for x, _ in series.values()]
    ys = [np.asarray(y, dtype=float) for _, y in series.values()]
    fin = lambda arrs: np.concatenate([a[np.isfinite(a)] for a in arrs] or [np.zeros(1)])
    allx, ally = fin(xs), fin(ys)
    if allx.size == 0:
        allx = np.zeros(1)
    if ally.size == 0:
        ally = np.zeros(1)
    x0, x1 = float(np.min(allx)), float(np.max(allx))
    y0, y1 = float(np.min(ally)), float(np.max(ally))
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = 0.5 * max(abs(y0), 1e-300)
        y0, y1 = y0 - pad, y1 + pad
    X = lambda v: ml + (v - x0) / (x1 - x0) * pw
    Y = lambda v: mt + (y1 - v) / (y1 - y0) * ph
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(5):
        fx = x0 + (x1 - x0) * k / 4
        fy = y0 + (y1 - y0) * k / 4
        lab = f"1e{fx:.3g}" if logx else f"{fx:.4g}"
        out.append(f'<text x="{X(fx):.2f}" y="{mt + ph + 18}" font-size="11" '
                   f'text-anchor="middle">{lab}</text>')
        out.append(f'<text x="{ml - 6}" y="{Y(fy) + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{fy:.4g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" font-size="12" '
               f'text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{ylabel}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="18" font-size="13" '
               f'text-anchor="middle">{title}</text>')
    for i, (label, x, y) in enumerate(zip(series, xs, ys)):
        color = _COLORS[i % len(_COLORS)]
        ok = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(x[ok], y[ok]))
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{pts}"/>')
        ly = mt + 14 * (i + 1)
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 34}" y="{ly}" font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, *args, **kw):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg_line_plot(*args, **kw))


# -- mode runners --------------------------------------------------------------------

def _objects(cfg):
    from .flux_catalog import PressureLaw, get_flux
    from .weights import get_weight
    return get_flux(cfg.flux), get_weight(cfg.weight, *cfg.weight_params), PressureLaw(cfg.gamma)


def _search(cfg, threads):
    from .scalar_destab import search_destabilizing_K
    flux, weight, _ = _objects(cfg)
    return search_destabilizing_K(flux, weight, cfg.K0, cfg.K_max, cfg.K_ratio, threads,
                                  cfg.panels)


def _k_values(cfg, threads, summary):
    if cfg.K != "auto":
        return list(cfg.K)
    rep = _search(cfg, threads)
    summary.append(("K_source", "search"))
    summary.append(("K_star", rep.K_star if rep.found else "none"))
    return [rep.K_star] if rep.found else []


def _settings(cfg, threads):
    from .pde_sim import ExperimentSettings
    return ExperimentSettings(eps=cfg.eps, spacing_factor=cfg.spacing_factor, cfl=cfg.cfl,
                              steps=cfg.steps, sample_every=cfg.sample_every,
                              lipschitz=cfg.lipschitz, n_rates=cfg.n_rates, n_grid=cfg.n_grid,
                              delta=cfg.delta, inner=cfg.inner,
                              window=None if cfg.window == "auto" else cfg.window,
                              threads=threads)


def run_profile(cfg, out, threads):
    from .wave_profiles import NSShock, ShockProfile
    flux, _, pressure = _objects(cfg)
    summary, series, rows = [], {}, []
    if cfg.model == "scalar":
        ks = _k_values(cfg, threads, summary)
        for K in ks:
            prof = ShockProfile(flux, K)
            summary += [(f"K={K!r}.sigma", prof.sigma),
                        (f"K={K!r}.ode_residual", prof.ode_residual()),
                        (f"K={K!r}.half_width", prof.half_width)]
            rows += [(K, x, s, np.nan) for x, s in prof.to_csv_rows()]
            series[f"K={K:.4g}"] = (prof.x, prof.values)
        header = ("K", "x", "value", "h")
    else:
        for vp in cfg.v_plus:
            sh = NSShock(pressure, cfg.v_minus, cfg.u_minus, vp, lazy=False)
            summary += [(f"v_plus={vp!r}.sigma", sh.sigma),
                        (f"v_plus={vp!r}.ode_residual", sh.ode_residual()),
                        (f"v_plus={vp!r}.half_width", sh.half_width)]
            rows += [(vp, x, v, h) for x, v, h in zip(sh.x, sh.values, sh.h_values)]
            series[f"v+={vp:.4g}"] = (sh.x, sh.values)
        header = ("v_plus", "x", "v", "h")
    write_csv(os.path.join(out, "profile.csv"), header, rows)
    write_svg(os.path.join(out, "profile.svg"), series, "viscous shock profiles", "x", "state")
    verdict = "computed" if rows else "not-found"
    return [("verdict", verdict)] + summary


def run_functional(cfg, out, threads):
    from . import scalar_destab as sd
    flux, weight, _ = _objects(cfg)
    summary = []
    ks = _k_values(cfg, threads, summary)
    rows, rand_rows = [], []
    rng = np.random.default_rng(cfg.seed)
    for K in ks:
        pert = sd.build_base_perturbation(weight, K, cfg.panels)
        w = pert.base
        Fv, J1, J2 = sd.eval_F(weight, flux, K, w, cfg.panels)
        Y = sd.eval_Y(weight, K, w, cfg.panels)
        Z, _ = sd.eval_Z(weight, flux, K, w, cfg.panels)
        R1 = sd.eval_R1(weight, flux, K, w, cfg.panels)
        lam = sd.lambda_star(weight, K, w, pert.phi, cfg.panels)
        rows.append((K, pert.C_w, Y, Z, R1, J1, J2, Fv, lam))
        for i in range(cfg.n_random):
            r = sd.random_admissible_perturbation(weight, K, rng, cfg.eps, panels=cfg.panels)
            val, rate = sd.best_bounded_rate_derivative(weight, flux, K, r, cfg.lipschitz,
                                                        cfg.panels)
            rand_rows.append((K, i, rate, val))
    write_csv(os.path.join(out, "functional.csv"),
              ("K", "C_w", "Y", "Z", "R1", "J1", "J2", "F", "lambda_star"), rows)
    if cfg.n_random:
        write_csv(os.path.join(out, "random_perturbations.csv"),
                  ("K", "index", "rate", "best_derivative"), rand_rows)
        worst = max(r[3] for r in rand_rows)
        summary.append(("random_max_best_derivative", worst))
    if not rows:
        verdict = "not-found"
    else:
        verdict = "positive" if all(r[7] > 0 for r in rows) else "non-positive"
    return [("verdict", verdict)] + summary


def run_search(cfg, out, threads):
    rep = _search(cfg, threads)
    cond_keys = sorted(rep.rows[0].conditions) if rep.rows else []
    rows = [(r.K, r.sigma, r.dA_minus_K, r.J1, r.J2, r.F, r.target, r.passes)
            + tuple(r.conditions[k] for k in cond_keys) for r in rep.rows]
    write_csv(os.path.join(out, "k_scan.csv"),
              ("K", "sigma", "dA_minus_K", "J1", "J2", "F", "target", "passes")
              + tuple(cond_keys), rows)
    K = np.array([r.K for r in rep.rows])
    series = {"F / |A'(-K)|": (K, np.array([r.F / abs(r.dA_minus_K) for r in rep.rows])),
              "target / |A'(-K)|": (K, np.array([r.target / abs(r.dA_minus_K)
                                                 for r in rep.rows]))}
    write_svg(os.path.join(out, "k_scan.svg"), series, "quadratic form along the K scan", "K",
              "normalized value", logx=True)
    return [("verdict", "found" if rep.found else "not-found"),
            ("K_star", rep.K_star if rep.found else "none"),
            ("first_positive", rep.first_positive if rep.first_positive else "none"),
            ("sign_changes", len(rep.sign_changes)), ("rho", rep.rho),
            ("theta", rep.theta if rep.theta is not None else "none"),
            ("cells", len(rep.rows))]


def run_sweep(cfg, out, threads):
    from .ns_destab import SweepRow, sweep_vplus
    _, weight, pressure = _objects(cfg)
    rep = sweep_vplus(pressure, weight, cfg.v_minus, cfg.u_minus, cfg.v_plus, threads,
                      cfg.panels)
    names = [f.name for f in fields(SweepRow)]
    write_csv(os.path.join(out, "sweep.csv"), names,
              [tuple(getattr(r, n) for n in names) for r in rep.rows])
    ok = [r for r in rep.rows if r.ok]
    vp = np.array([r.v_plus for r in ok])
    series = {lab: (vp, np.array([getattr(r, attr) for r in ok]))
              for lab, attr in (("|J1| [p]/|s|", "J1_normalized"), ("J2/|s|", "J2_normalized"),
                                ("|J3| [p]/|s|", "J3_normalized"),
                                ("|alpha| sqrt(p+)", "alpha_normalized"))}
    write_svg(os.path.join(out, "sweep.svg"), series, "normalized terms across v+", "v+",
              "value", logx=True)

    def spread(attr):
        v = np.array([getattr(r, attr) for r in ok])
        v = np.abs(v[np.isfinite(v)])
        return float(np.max(v) / np.min(v)) if v.size and np.min(v) > 0 else float("nan")

    return [("verdict", "found" if rep.found else "not-found"),
            ("smallest_positive", rep.smallest_positive if rep.found else "none"),
            ("failed_cells", len(rep.rows) - len(ok)),
            ("J1_spread", spread("J1_normalized")), ("J3_spread", spread("J3_normalized")),
            ("alpha_spread", spread("alpha_normalized")),
            ("J2_min", min((r.J2_normalized for r in ok), default=float("nan")))]


def _write_reports(out, cases):
    ent, dec = [], []
    series = {}
    for label, rep in cases:
        for t, name, v in rep.rows():
            ent.append((label, t, name, v, (v - rep.initial)))
        for d in rep.decomposition:
            dec.append((label, d["t"], d["rate"], d["finite_difference"], d["formula"],
                        d["residual"], d.get("drift", float("nan"))))
        for name in ("zero", "greedy"):
            series[f"{label} {name}"] = (rep.times, rep.values[name] - rep.initial)
        fastest = max((n for n in rep.values if n.startswith("rate+")), default=None)
        if fastest:
            series[f"{label} {fastest}"] = (rep.times, rep.values[fastest] - rep.initial)
    write_csv(os.path.join(out, "entropy.csv"),
              ("case", "t", "strategy", "functional", "change"), ent)
    write_csv(os.path.join(out, "decomposition.csv"),
              ("case", "t", "rate", "finite_difference", "formula", "residual", "drift"), dec)
    write_svg(os.path.join(out, "entropy.svg"), series,
              "weighted relative entropy minus its initial value", "t", "E(t) - E(0)")


def _simulate_summary(cases):
    out = []
    for label, rep in cases:
        t0 = [d["residual"] for d in rep.decomposition if d["t"] == 0.0]
        out += [(f"{label}.verdict", "increase" if rep.verdict else "no-increase"),
                (f"{label}.T_star", rep.T_star),
                (f"{label}.initial", rep.initial),
                (f"{label}.t0_max_residual", max(t0) if t0 else float("nan")),
                (f"{label}.drift", rep.drift)]
        out += [(f"{label}.note", n) for n in rep.notes]
    return out


def run_simulate_scalar(cfg, out, threads):
    from .pde_sim import run_scalar_experiment
    flux, weight, _ = _objects(cfg)
    summary = []
    ks = _k_values(cfg, threads, summary)
    st = _settings(cfg, threads)
    cases = [(f"K={K!r}", run_scalar_experiment(flux, weight, K, st)[0]) for K in ks]
    _write_reports(out, cases)
    if not cases:
        verdict = "not-found"
    else:
        verdict = "increase" if all(r.verdict for _, r in cases) else "no-increase"
    return [("verdict", verdict)] + summary + _simulate_summary(cases)


def run_simulate_ns(cfg, out, threads):
    from .pde_sim import run_system_experiment
    _, weight, pressure = _objects(cfg)
    st = _settings(cfg, threads)
    cases = [(f"v_plus={vp!r}", run_system_experiment(pressure, weight, cfg.v_minus,
                                                      cfg.u_minus, vp, st)[0])
             for vp in cfg.v_plus]
    _write_reports(out, cases)
    verdict = "increase" if all(r.verdict for _, r in cases) else "no-increase"
    return [("verdict", verdict)] + _simulate_summary(cases)


RUNNERS = {
    "profile": run_profile,
    "functional": run_functional,
    "search-k": run_search,
    "sweep-vplus": run_sweep,
    "simulate-scalar": run_simulate_scalar,
    "simulate-ns": run_simulate_ns,
}


# -- orchestration -------------------------------------------------------------------

def resolve_threads(requested, env=None):
    """Thread count: the environment cap, when set, bounds the request."""
    env = os.environ if env is None else env
    n = max(1, int(requested))
    cap = env.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"environment {THREADS_ENV}={cap!r} is not an integer") from None
    return n


def run(cfg, out_dir, threads=None):
    """Run one configuration and move the artifacts into ``out_dir``.

    Returns the summary items.  On failure nothing is written to
    ``out_dir`` and the exception propagates.
    """
    n = resolve_threads(cfg.threads if threads is None else threads)
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    scratch = tempfile.mkdtemp(prefix=".shockdestab-", dir=parent)
    try:
        items = [("mode", cfg.mode)] + RUNNERS[cfg.mode](cfg, scratch, n)
        with open(os.path.join(scratch, "config.txt"), "w", encoding="utf-8") as fh:
            fh.write(dump_config(cfg))
        write_summary(os.path.join(scratch, "summary.txt"), items)
        os.makedirs(out_dir, exist_ok=True)
        for name in sorted(os.listdir(scratch)):
            os.replace(os.path.join(scratch, name), os.path.join(out_dir, name))
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return items


def build_parser():
    ap = argparse.ArgumentParser(prog="shockdestab",
                                 description="viscous shock destabilization experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode} pipeline")
        p.add_argument("--config", required=True, help="configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (capped by ${THREADS_ENV})")
    p = sub.add_parser("dump-config", help="print the normalized configuration")
    p.add_argument("--config", required=True)
    return ap


def _load(path, mode=None):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    cfg = parse_config(text)
    if mode is not None and "mode" in _given_keys(text) and cfg.mode != mode:
        raise ConfigError(f"key 'mode': config says {cfg.mode!r} but subcommand is {mode!r}")
    if mode is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "mode": mode})
    return cfg


def _given_keys(text):
    keys = set()
    for line in text.splitlines():
        body = line.split("#", 1)[0].strip()
        if "=" in body and not body.startswith("["):
            keys.add(body.split("=", 1)[0].strip())
    return keys


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "dump-config":
            sys.stdout.write(dump_config(_load(args.config)))
            return 0
        cfg = _load(args.config, args.command)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        items = run(cfg, args.out, args.threads)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report with stage tag
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    verdict = dict(items).get("verdict")
    print(f"{args.command}: verdict = {verdict}; artifacts in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
