"""Figure recipes: run sweeps, write data files and a manifest.

Each recipe writes CSV data, JSON fit summaries and a ``plot.py`` script for
an external plotter into one output directory, then a ``manifest.json`` with
the configuration snapshot, file hashes and timings. Sweep points run in a
bounded process pool and are written in sweep order, so outputs do not
depend on scheduling. Timings live only in the manifest.
"""
from __future__ import annotations

import math
import os
import platform
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, RECIPES, SCHEMAS
from .convolution import KINDS, convolution_value, decoherence_time, fit_all, fit_model, scaling_exponent
from .echo import EchoPropagator, adaptive_times, decoherence_factor
from .errors import ConfigError, DecoherenceError, NotCrossedError
from .output import sha256_file, write_csv, write_json, write_rows
from .qbm import QbmConfig, adaptive_rb_trace, decoherence_time_sweep, fit_power_law, qbm_zero_temperature_trace
from .spectral import (
    density_of_states,
    diagonalize,
    effective_width_or_golden_rule,
    fit_lorentzian,
    golden_rule_gamma,
    mean_offdiagonal_square,
    middle_index,
    overlap_profile,
    perturbation_in_basis,
    tail_diagnostic,
)
from .spin_model import SpinBathConfig, build_model

SWEEP_HEADER = ("coupling", "tau_d", "fit_kind", "gamma", "sigma", "rms")


@dataclass
class RunManifest:
    recipe: str
    config: dict
    output_dir: str
    artifacts: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    software: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def data_hashes(self) -> dict[str, str]:
        return {a["path"]: a["sha256"] for a in self.artifacts}

    def to_dict(self) -> dict:
        return asdict(self)


class _Run:
    """Collects artifacts and failures of one recipe invocation."""

    def __init__(self, out_dir: Path):
        self.out = out_dir
        self.paths: list[Path] = []
        self.failures: list[dict] = []
        self.timings: dict[str, float] = {}

    def add(self, path) -> Path:
        self.paths.append(Path(path))
        return Path(path)

    def csv(self, name, header, columns):
        return self.add(write_csv(self.out / name, header, columns))

    def rows(self, name, header, rows):
        return self.add(write_rows(self.out / name, header, rows))

    def json(self, name, obj):
        return self.add(write_json(self.out / name, obj))

    def text(self, name, text):
        path = self.out / name
        path.write_text(text)
        return self.add(path)

    def fail(self, point, error):
        self.failures.append({"point": point, "error": error})


def _map(fn, items, jobs: int):
    """``[("ok", fn(x)) | ("error", message)]`` in input order."""
    if jobs <= 1 or len(items) <= 1:
        return [_guarded(fn, x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        futures = [pool.submit(_guarded, fn, x) for x in items]
        return [f.result() for f in futures]


def _guarded(fn, x):
    try:
        return ("ok", fn(x))
    except Exception as exc:  # one bad point must not abort its siblings
        return ("error", f"{type(exc).__name__}: {exc}")


def _tag(x: float) -> str:
    return f"{x:.6g}".replace("+", "")


# ---------------------------------------------------------------- spin bath

@lru_cache(maxsize=2)
def _spin_setup(n_spins: int, seed: int, axes: tuple):
    model = build_model(SpinBathConfig(n_spins, 0.0, seed, axes))
    env = diagonalize(model.h_env, check=False)
    return model, env


@lru_cache(maxsize=2)
def _perturbation(n_spins: int, seed: int, axes: tuple):
    model, env = _spin_setup(n_spins, seed, axes)
    return perturbation_in_basis(model, env)


def _memory_check(n_spins: int) -> None:
    need = 8 * 4**n_spins * 6
    try:
        have = os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return
    if need > have:
        raise ConfigError([f"model.n_spins: {n_spins} spins need about {need / 2**30:.1f} GiB, "
                           f"more than the {have / 2**30:.1f} GiB available"])


def _reference_block(dim: int, count: int) -> np.ndarray:
    mid = middle_index(dim)
    lo = max(0, min(dim - count, mid - count // 2))
    return np.arange(lo, lo + count)


def _v_squared(pert, env, refs, lam, window_widths):
    """Mean squared coupling element, on-shell around ``refs``.

    Falls back to the mean over the whole matrix when ``window_widths`` is None
    or the window holds no other level (very small baths).
    """
    if window_widths is not None:
        window = window_widths * float(np.std(env.eigenvalues))
        try:
            return lam**2 * mean_offdiagonal_square(pert, env.eigenvalues, refs, window)
        except ValueError:
            pass
    return lam**2 * mean_offdiagonal_square(pert)


def _v_squared_all_pairs(pert, lam):
    """Unwindowed mean over every off-diagonal element, reported next to the on-shell value."""
    return lam**2 * mean_offdiagonal_square(pert)


def _prediction(model, env, pert, lam, n, times, values, v2_window):
    """Convolution curve predicted from golden-rule/effective width and the perturbed bandwidth."""
    dos = density_of_states(env.eigenvalues)
    v2 = _v_squared(pert, env, n, lam, v2_window)
    en = float(env.eigenvalues[n])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        width = effective_width_or_golden_rule(v2, dos, en)
    sigma = math.sqrt(dos.width**2 + 4 * lam**2 * float(np.sum(model.a**2)))
    curve = convolution_value(width.gamma_eff, sigma, times)
    return {
        "v_squared": v2,
        "v_squared_all_pairs": _v_squared_all_pairs(pert, lam),
        "eta_at_en": float(dos.states_per_energy(en)),
        "gamma_golden_rule": golden_rule_gamma(v2, float(dos.states_per_energy(en))),
        "gamma": width.gamma_eff,
        "e_r": width.e_shift,
        "sigma": sigma,
        "fallback_to_golden_rule": width.fallback,
        "rms_vs_data": float(np.sqrt(np.mean((curve - np.abs(values)) ** 2))),
    }


def _fig2_point(args):
    n_spins, seed, axes, lam, n_times, floor, n_ref, predict, v2_window = args
    model, env = _spin_setup(n_spins, seed, axes)
    model = model.with_lambda(lam)
    prop = EchoPropagator(model)
    refs = _reference_block(model.dim, n_ref)
    n = middle_index(model.dim)
    times = adaptive_times(prop, env.eigenvectors[:, n], n_times)
    amps = prop.amplitudes(env.eigenvectors[:, refs], times)
    amps[times == 0] = 1.0
    values = amps.mean(axis=1)
    modulus = np.abs(amps).mean(axis=1)
    fits = {k: f.to_dict() for k, f in fit_all(times, modulus, floor=floor).items()}
    try:
        tau = decoherence_time(times, modulus)
    except NotCrossedError:
        tau = math.nan
    pred = _prediction(model, env, _perturbation(n_spins, seed, axes), lam, n, times, modulus,
                       v2_window) if predict else None
    return {"times": times, "values": values, "modulus": modulus, "fits": fits, "tau_d": tau,
            "prediction": pred, "reference_states": refs.tolist()}


def recipe_fig2_crossover(cfg: ExperimentConfig, run: _Run):
    m, a = cfg.model, cfg.analysis
    axes = tuple(m["include_axes"])
    lams = cfg.sweep_values
    items = [(m["n_spins"], cfg.seed, axes, lam, a["n_times"], a["floor"], a["reference_states"], a["predict"],
              a["v2_window"]) for lam in lams]
    results = _map(_fig2_point, items, cfg.parallelism)
    rows, summary, winners = [], {}, []
    for lam, (status, res) in zip(lams, results):
        if status != "ok":
            run.fail({"lambda": lam}, res)
            continue
        name = f"trace_lambda_{_tag(lam)}.csv"
        v = res["values"]
        run.csv(name, ("time", "re", "im", "abs"), (res["times"], v.real, v.imag, res["modulus"]))
        summary[_tag(lam)] = {"fits": res["fits"], "tau_d": res["tau_d"], "prediction": res["prediction"],
                              "reference_states": res["reference_states"], "trace": name}
        for kind in KINDS:
            f = res["fits"][kind]
            rows.append((lam, res["tau_d"], kind, f["params"]["gamma"], f["params"]["sigma"], f["residual"]))
        rms = {k: res["fits"][k]["residual"] for k in KINDS}
        if rms["convolution"] < min(rms["exponential"], rms["gaussian"]):
            winners.append(lam)
    run.rows("sweep.csv", SWEEP_HEADER, rows)
    run.json("fits.json", summary)
    window = {"lambdas": winners, "window": [min(winners), max(winners)] if winners else None}
    run.json("crossover.json", window)
    run.text("plot.py", _plot_script(
        "echo traces", [f"trace_lambda_{_tag(l)}.csv" for l in lams], "time", "abs", logy=True))


def _fig1_point(args):
    n_spins, seed, axes, lam, bins, ref, central, tail_start, v2_window = args
    model, env = _spin_setup(n_spins, seed, axes)
    n = middle_index(model.dim) if ref is None else ref
    h = np.array(model.h_env, copy=True)
    h[np.diag_indices_from(h)] += 2 * lam * model.h_int_diag
    pert = diagonalize(h, check=False)
    prof = overlap_profile(env, n, pert, bins)
    fit = fit_lorentzian(prof, central)
    tail = tail_diagnostic(prof, fit, tail_start)
    dos = density_of_states(env.eigenvalues, bins)
    coupling = _perturbation(n_spins, seed, axes)
    v2 = _v_squared(coupling, env, n, lam, v2_window)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        width = effective_width_or_golden_rule(v2, dos, prof.reference_energy)
    return {
        "profile": prof,
        "perturbed_dos": density_of_states(pert.eigenvalues, bins),
        "lorentzian": fit.to_dict(),
        "tail": None if tail is None else asdict(tail),
        "prediction": {"v_squared": v2,
                       "v_squared_all_pairs": _v_squared_all_pairs(coupling, lam),
                       "gamma_eff": width.gamma_eff, "e_r": width.e_shift,
                       "fallback_to_golden_rule": width.fallback},
    }


def recipe_fig1_overlap(cfg: ExperimentConfig, run: _Run):
    m, a = cfg.model, cfg.analysis
    axes = tuple(m["include_axes"])
    model, env = _spin_setup(m["n_spins"], cfg.seed, axes)
    dos = density_of_states(env.eigenvalues, a["bins"])
    run.add(dos.to_csv(run.out / "dos.csv"))
    summary = {"dos": {"mean": dos.mean, "width": dos.width, "skewness": dos.skewness,
                       "excess_kurtosis": dos.excess_kurtosis, "n_states": dos.n_states}}
    items = [(m["n_spins"], cfg.seed, axes, lam, a["bins"], a["reference_index"], a["central_widths"],
              a["tail_start_widths"], a["v2_window"]) for lam in cfg.sweep_values]
    files = []
    for lam, (status, res) in zip(cfg.sweep_values, _map(_fig1_point, items, cfg.parallelism)):
        if status != "ok":
            run.fail({"lambda": lam}, res)
            continue
        tag = _tag(lam)
        prof = res["profile"]
        run.add(prof.to_csv(run.out / f"overlap_lambda_{tag}.csv"))
        run.add(prof.weights_to_csv(run.out / f"weights_lambda_{tag}.csv"))
        run.add(prof.ldos_to_csv(run.out / f"ldos_lambda_{tag}.csv"))
        run.add(res["perturbed_dos"].to_csv(run.out / f"dos_perturbed_lambda_{tag}.csv"))
        files.append(f"overlap_lambda_{tag}.csv")
        summary[tag] = {"reference_index": prof.reference_index, "reference_energy": prof.reference_energy,
                        "lorentzian": res["lorentzian"], "tail": res["tail"], "prediction": res["prediction"]}
    run.json("fits.json", summary)
    run.text("plot.py", _plot_script("overlap profiles", files, "energy", "value", logy=True))


def _scaling_point(args):
    n_spins, seed, axes, lam, regime, n_ref, n_times, weak_stop, floor, v2_window = args
    model, env = _spin_setup(n_spins, seed, axes)
    model = model.with_lambda(lam)
    prop = EchoPropagator(model)
    refs = _reference_block(model.dim, n_ref)
    n = middle_index(model.dim)
    if regime == "weak":
        pert = _perturbation(n_spins, seed, axes)
        dos = density_of_states(env.eigenvalues)
        eta = float(dos.states_per_energy(env.eigenvalues[n]))
        gamma_gr = golden_rule_gamma(_v_squared(pert, env, refs, lam, v2_window), eta)
        gamma_gr_all = golden_rule_gamma(_v_squared_all_pairs(pert, lam), eta)
        times = np.linspace(0.0, 4.0 / gamma_gr, n_times)
    else:
        gamma_gr = gamma_gr_all = math.nan
        times = adaptive_times(prop, env.eigenvectors[:, n], n_times, floor=floor)
    amps = prop.amplitudes(env.eigenvectors[:, refs], times)
    amps[times == 0] = 1.0
    modulus = np.abs(amps).mean(axis=1)
    if regime == "weak":
        mask = np.cumprod(modulus > weak_stop).astype(bool)
        fit = fit_model(times, modulus, "exponential", window=mask)
    else:
        fit = fit_model(times, modulus, "gaussian", floor=floor)
    try:
        tau = decoherence_time(times, modulus)
    except NotCrossedError:
        tau = math.nan
    return {"times": times, "modulus": modulus, "fit": fit.to_dict(), "tau_d": tau,
            "gamma_golden_rule": gamma_gr, "gamma_golden_rule_all_pairs": gamma_gr_all}


def recipe_spin_scaling(cfg: ExperimentConfig, run: _Run):
    m, a = cfg.model, cfg.analysis
    axes = tuple(m["include_axes"])
    seeds = [cfg.seed + k for k in range(m["n_seeds"])]
    items, keys = [], []
    for lam in cfg.sweep_values:
        regime = "weak" if lam <= a["weak_max"] else "strong"
        for s in seeds:
            items.append((m["n_spins"], s, axes, lam, regime, a["reference_states"], a["n_times"],
                          a["weak_stop"], a["floor"], a["v2_window"]))
            keys.append((lam, s, regime))
    # group by seed so each worker reuses one environment diagonalization
    order = sorted(range(len(items)), key=lambda i: (keys[i][1], keys[i][0]))
    results = [None] * len(items)
    for i, res in zip(order, _map(_scaling_point, [items[i] for i in order], cfg.parallelism)):
        results[i] = res
    per_point, agg = [], {}
    for (lam, s, regime), (status, res) in zip(keys, results):
        if status != "ok":
            run.fail({"lambda": lam, "seed": s}, res)
            continue
        p = res["fit"]["params"]
        per_point.append((lam, s, regime, p["gamma"], p["sigma"], res["fit"]["residual"], res["fit"]["r2"],
                          res["tau_d"], res["gamma_golden_rule"]))
        agg.setdefault((lam, regime), []).append(res)
        run.csv(f"trace_lambda_{_tag(lam)}_seed_{s}.csv", ("time", "abs"), (res["times"], res["modulus"]))
    run.rows("points.csv", ("coupling", "seed", "regime", "gamma", "sigma", "rms", "r2", "tau_d",
                            "gamma_golden_rule"), per_point)
    rows, summary = [], {"weak": {}, "strong": {}}
    for (lam, regime), group in sorted(agg.items()):
        kind = "exponential" if regime == "weak" else "gaussian"
        gamma = float(np.mean([g["fit"]["params"]["gamma"] for g in group]))
        sigma = float(np.mean([g["fit"]["params"]["sigma"] for g in group]))
        rms = float(np.mean([g["fit"]["residual"] for g in group]))
        tau = float(np.mean([g["tau_d"] for g in group]))
        rows.append((lam, tau, kind, gamma, sigma, rms))
        summary[regime][_tag(lam)] = {
            "gamma": gamma, "sigma": sigma, "rms": rms, "tau_d": tau, "n_seeds": len(group),
            "min_r2": float(min(g["fit"]["r2"] for g in group)),
            "gamma_golden_rule": float(np.mean([g["gamma_golden_rule"] for g in group])),
            "gamma_golden_rule_all_pairs": float(np.mean([g["gamma_golden_rule_all_pairs"] for g in group])),
        }
    run.rows("sweep.csv", SWEEP_HEADER, rows)
    slopes = {}
    for regime, key in (("weak", "gamma"), ("strong", "sigma")):
        pts = summary[regime]
        if len(pts) >= 4:
            lam = [float(k) for k in pts]
            fit = scaling_exponent(lam, [pts[k][key] for k in pts])
            slopes[regime] = {"quantity": key, **asdict(fit)}
    summary["slopes"] = slopes
    run.json("fits.json", summary)
    run.text("plot.py", _plot_script("decay rates", ["sweep.csv"], "coupling", "gamma", logy=True, logx=True))


# ---------------------------------------------------------------- QBM

def _qbm_config(model: dict, gamma0: float | None = None) -> QbmConfig:
    g = model.get("gamma0", 0.0) if gamma0 is None else gamma0
    return QbmConfig(g, model["cutoff"], model["temperature"], model["omega0"], model["x0"], model["delta"])


def _fig3_trace(args):
    model, gamma0, n_times, floor, step = args
    trace = adaptive_rb_trace(_qbm_config(model, gamma0), floor=floor, n_times=n_times, step=step)
    t, r = trace.accepted()
    return {"trace": trace, "fits": {k: f.to_dict() for k, f in fit_all(t, r, floor=floor).items()}}


def _fig3_tau(args):
    model, gamma0, step = args
    return decoherence_time_sweep(_qbm_config(model), [gamma0], step=step)[0]


def recipe_fig3_qbm(cfg: ExperimentConfig, run: _Run):
    m, a = cfg.model, cfg.analysis
    specs = a["traces"]
    items = [(m, s["gamma0"], a["n_times"], a["floor"], a["step"]) for s in specs]
    summary, files = {"traces": {}}, []
    for spec, (status, res) in zip(specs, _map(_fig3_trace, items, cfg.parallelism)):
        tag = _tag(spec["gamma0"])
        if status != "ok":
            run.fail({"gamma0": spec["gamma0"]}, res)
            continue
        name = f"trace_gamma0_{tag}.csv"
        run.add(res["trace"].to_csv(run.out / name))
        files.append(name)
        summary["traces"][tag] = {"gamma0": spec["gamma0"], "t0": spec["t0"], "step": res["trace"].step,
                                  "fits": res["fits"], "file": name}
    gammas = cfg.sweep_values
    taus = []
    for g, (status, res) in zip(gammas, _map(_fig3_tau, [(m, g, a["step"]) for g in gammas], cfg.parallelism)):
        if status != "ok":
            run.fail({"gamma0": g}, res)
            taus.append(math.nan)
        else:
            taus.append(res)
    run.csv("sweep.csv", ("gamma0", "tau_d"), (np.asarray(gammas, float), np.asarray(taus, float)))
    slopes = {}
    for name in ("gaussian_decade", "exponential_decade"):
        lo, hi = a[name]
        sel = [(g, t) for g, t in zip(gammas, taus) if lo * (1 - 1e-9) <= g <= hi * (1 + 1e-9) and math.isfinite(t)]
        if len(sel) >= 4:
            slopes[name] = {"n_points": len(sel), **asdict(scaling_exponent(*zip(*sel)))}
        else:
            slopes[name] = None
    summary["slopes"] = slopes
    run.json("fits.json", summary)
    t0s = {f"trace_gamma0_{_tag(s['gamma0'])}.csv": s["t0"] for s in specs}
    run.text("plot.py", _plot_script("r_B traces (time / t0)", files, "time", "r_b", scale=t0s))


def recipe_figA1_zero_t(cfg: ExperimentConfig, run: _Run):
    m, a = cfg.model, cfg.analysis
    qc = _qbm_config(m)
    times = np.linspace(0.0, a["t_max"], a["n_times"])
    trace = qbm_zero_temperature_trace(qc, times, step=a["step"])
    run.add(trace.to_csv(run.out / "trace.csv"))
    t, r = trace.accepted()
    early = t <= a["early_t_max"]
    summary = {"early": {}, "late": None}
    try:
        summary["early"] = {k: f.to_dict() for k, f in fit_all(t[early], r[early]).items()}
    except DecoherenceError as exc:
        run.fail({"window": "early"}, f"{type(exc).__name__}: {exc}")
    try:
        pl = fit_power_law(t, r, tuple(a["late_window"]))
        summary["late"] = {"model": "power_law", "params": {"amplitude": pl.amplitude, "exponent": pl.exponent,
                           "offset": pl.offset}, "r2": pl.r_squared, "residual": pl.rms_residual,
                           "fit_window": list(pl.fit_window)}
    except (ValueError, DecoherenceError) as exc:
        run.fail({"window": "late"}, f"{type(exc).__name__}: {exc}")
    run.json("fits.json", summary)
    run.text("plot.py", _plot_script("zero-temperature r_B", ["trace.csv"], "time", "r_b", logy=True, logx=True))


RECIPE_FUNCTIONS = {
    "fig1_overlap": recipe_fig1_overlap,
    "fig2_crossover": recipe_fig2_crossover,
    "spin_scaling": recipe_spin_scaling,
    "fig3_qbm": recipe_fig3_qbm,
    "figA1_zeroT": recipe_figA1_zero_t,
}
assert set(RECIPE_FUNCTIONS) == set(RECIPES)


def describe_recipes() -> dict[str, str]:
    return {name: SCHEMAS[name].description for name in RECIPES}


def _plot_script(title, files, xcol, ycol, logy=False, logx=False, scale=None) -> str:
    return f'''"""Plot {title}. Run from this directory: python plot.py (needs matplotlib)."""
import csv

import matplotlib.pyplot as plt

FILES = {files!r}
SCALE = {scale or {}!r}


def load(name):
    with open(name) as fh:
        rows = list(csv.DictReader(fh))
    return [float(r[{xcol!r}]) for r in rows], [float(r[{ycol!r}]) for r in rows]


fig, ax = plt.subplots()
for name in FILES:
    x, y = load(name)
    s = SCALE.get(name, 1.0)
    ax.plot([v / s for v in x], y, label=name)
ax.set_xlabel({xcol!r})
ax.set_ylabel({ycol!r})
{"ax.set_yscale('log')" if logy else ""}
{"ax.set_xscale('log')" if logx else ""}
ax.set_title({title!r})
ax.legend(fontsize="small")
fig.savefig("plot.png", dpi=150)
'''


def run_recipe(cfg: ExperimentConfig, output_dir: str | os.PathLike | None = None) -> RunManifest:
    """Run ``cfg.recipe`` and write its files plus ``manifest.json``.

    Raises
    ------
    ConfigError
        Unknown recipe or an infeasible model size.
    """
    if cfg.recipe not in RECIPE_FUNCTIONS:
        raise ConfigError([f"recipe: unknown recipe {cfg.recipe!r}"])
    if "n_spins" in cfg.model:
        _memory_check(cfg.model["n_spins"])
    out = Path(output_dir or cfg.output_dir or Path("runs") / cfg.recipe)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(out)
    start = time.perf_counter()
    try:
        RECIPE_FUNCTIONS[cfg.recipe](cfg, run)
    except DecoherenceError as exc:
        run.fail({"recipe": cfg.recipe}, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")
    run.timings["total_seconds"] = time.perf_counter() - start
    manifest = RunManifest(
        recipe=cfg.recipe,
        config=cfg.to_dict(),
        output_dir=str(out),
        artifacts=[{"path": p.name, "sha256": sha256_file(p)} for p in run.paths],
        failures=run.failures,
        timings=run.timings,
        software={"package": __version__, "python": platform.python_version(), "numpy": np.__version__},
    )
    write_json(out / "manifest.json", manifest.to_dict())
    return manifest
