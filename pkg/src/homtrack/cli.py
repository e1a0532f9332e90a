"""Command-line workflows: simulate, correlate, fit, track, tune, report."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .correlator import CorrelationConfig, CorrelationHistogram, cross_correlate, peak_areas, sliding_visibility
from .inference import FitError, HOM_PARAMS, fit_hbt, fit_hom, fit_lorentzian, wandering_stats
from .model import EmitterParams, HomModelParams, max_visibility, predict_visibility, visibility_from_areas
from .sim import (ConfigError, Mode, SimConfig, SpectralDiffusionParams, config_from_json, simulate,
                  simulate_excitation_scan)
from .tagio import TagFormatError, TimeTagStream, read_tags, write_tags
from .tuning import StarkShiftParams, auto_tune

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
TAG_FILES = ("tags_ch0.ttag", "tags_ch1.ttag")
SCAN_KEYS = {"kind", "emitter", "sigma", "corr_time", "pump_power_tag", "scan_range", "scan_rate",
             "n_rows", "n_points", "peak_counts", "background", "rng_seed"}
TUNE_KEYS = {"kind", "nu1_MHz", "nu2_MHz", "max_shift", "dose_scale", "sign", "probe_noise", "step_dose",
             "dose_budget", "max_steps", "probe_repeats", "tolerance", "rng_seed"}


class IOFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration and manifests
# ---------------------------------------------------------------------------

def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("homtrack").joinpath("presets").iterdir()
                  if p.name.endswith(".json"))


def _load_raw(args) -> tuple[dict, str, str]:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.preset:
        if args.preset not in preset_names():
            raise ConfigError(f"unknown preset {args.preset!r}; available: {', '.join(preset_names())}")
        src = resources.files("homtrack").joinpath("presets", args.preset + ".json")
        text, name = src.read_text(), f"preset:{args.preset}"
    elif args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise IOFailure(f"cannot read config {args.config}: {exc}") from None
        name = str(args.config)
    else:
        raise ConfigError("one of --config or --preset is required")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}:1: top level must be an object")
    if args.seed is not None:
        raw["rng_seed"] = args.seed
    return raw, text, name


def _check_keys(raw, allowed, text, name):
    from .sim import _line_of
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{name}:{_line_of(text, key)}: unknown field {key!r}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create output directory {out}: {exc}") from None
    return out


def _write_manifest(out: Path, sub: str, args, inputs, outputs, seed=None, extra=None, started=0.0):
    man = {
        "subcommand": sub,
        "config": getattr(args, "config", None),
        "preset": getattr(args, "preset", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "rng_seed": seed,
        "tool_version": __version__,
        "wall_time_s": time.time() - started,
    }
    man.update(extra or {})
    path = out / f"manifest_{sub}.json"
    path.write_text(json.dumps(man, indent=2, default=str) + "\n")
    return path


def _sim_manifest(run: Path) -> dict | None:
    p = run / "manifest_simulate.json"
    if p.exists():
        return json.loads(p.read_text())
    return None


def _corr_config(args) -> CorrelationConfig:
    return CorrelationConfig(bin_width=int(args.bin_width), max_lag=float(args.max_lag),
                             window_length=float(getattr(args, "window", 30.0)),
                             window_step=float(getattr(args, "step", 1.0)))


def _load_tags(inputs: list[str]) -> tuple[TimeTagStream, dict | None, list[Path]]:
    paths = [Path(p) for p in inputs]
    man = None
    if len(paths) == 1 and paths[0].is_dir():
        man = _sim_manifest(paths[0])
        paths = [paths[0] / f for f in TAG_FILES]
    streams = []
    for p in paths:
        try:
            streams.append(read_tags(p))
        except OSError as exc:
            raise IOFailure(f"cannot read {p}: {exc}") from None
    header = {}
    if man and "duration_s" in man:
        header["duration_s"] = man["duration_s"]
    return TimeTagStream.merge(*streams, header=header), man, paths


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = time.time()
    raw, text, name = _load_raw(args)
    kind = raw.get("kind", "tags")
    out = _out_dir(args)
    if kind == "excitation_scan":
        return _simulate_scan(args, raw, text, name, out, started)
    if kind == "tuning":
        raise ConfigError(f"{name}: tuning configs run with the 'tune' subcommand")
    raw = {k: v for k, v in raw.items() if k != "kind"}
    cfg = config_from_json(raw, text, name)
    want_truth = cfg.mode is Mode.HOM_DISTINCT
    res = simulate(cfg, return_truth=want_truth)
    outputs = []
    for stream, fname in zip(res[:2], TAG_FILES):
        try:
            write_tags(stream, out / fname)
        except OSError as exc:
            raise IOFailure(f"cannot write {out / fname}: {exc}") from None
        outputs.append(out / fname)
    if want_truth:
        truth = res[2]
        p = out / "truth.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pair_time_s", "nu1_MHz", "nu2_MHz"])
            for row in zip(truth["pair_time_s"], truth["nu1"], truth["nu2"]):
                w.writerow([f"{row[0]:.9f}", f"{row[1]:.6f}", f"{row[2]:.6f}"])
        outputs.append(p)
    _write_manifest(out, "simulate", args, [], outputs, cfg.rng_seed,
                    {"sim_config": cfg.to_dict(), "duration_s": cfg.duration,
                     "n_tags": [len(s) for s in res[:2]]}, started)
    print(f"wrote {len(res[0]) + len(res[1])} tags to {out}")
    return EXIT_OK


def _simulate_scan(args, raw, text, name, out, started) -> int:
    _check_keys(raw, SCAN_KEYS, text, name)
    try:
        emitter = EmitterParams(**raw.get("emitter", {"t1": 4.0, "fwhm": 52.0}))
        diff = SpectralDiffusionParams(raw.get("sigma", 0.0), raw.get("corr_time", 200.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None
    scan = simulate_excitation_scan(
        emitter, diff, tuple(raw.get("scan_range", (-300.0, 300.0))), raw.get("scan_rate", 40.0),
        int(raw.get("n_rows", 60)), raw.get("pump_power_tag"), int(raw.get("n_points", 121)),
        raw.get("peak_counts", 150.0), raw.get("background", 2.0), seed=int(raw.get("rng_seed", 0)))
    p = out / "scan.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_time_s", "true_center_MHz"] + [f"{f:.6f}" for f in scan.freqs])
        for t, c, row in zip(scan.row_times, scan.centers, scan.counts):
            w.writerow([f"{t:.6f}", f"{c:.6f}"] + [f"{v:.0f}" for v in row])
    _write_manifest(out, "simulate", args, [], [p], raw.get("rng_seed", 0),
                    {"scan_config": raw, "emitter": {"t1": emitter.t1, "fwhm": emitter.fwhm}}, started)
    print(f"wrote {scan.counts.shape[0]} scan rows to {p}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    started = time.time()
    tags, _, paths = _load_tags(args.inputs)
    hist = cross_correlate(tags, _corr_config(args))
    out = _out_dir(args)
    p = out / "histogram.csv"
    hist.to_csv(p)
    _write_manifest(out, "correlate", args, paths, [p], None,
                    {"bin_width_ps": args.bin_width, "max_lag_ns": args.max_lag}, started)
    print(f"histogram: {len(hist.counts)} bins, {int(hist.counts.sum())} coincidences -> {p}")
    return EXIT_OK


def _parse_fixed(items) -> dict:
    fixed = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--fix expects PARAM=VALUE, got {item!r}")
        key = key.strip()
        names = {"t1": ("t1_1", "t1_2"), "t2": ("t2_1", "t2_2"), "v": ("v_factor",)}.get(key, (key,))
        for n in names:
            if n not in HOM_PARAMS:
                raise ConfigError(f"--fix: unknown parameter {key!r}; choose from {', '.join(HOM_PARAMS)}")
            try:
                fixed[n] = float(val)
            except ValueError:
                raise ConfigError(f"--fix {key}: {val!r} is not a number") from None
    return fixed


def _hist_input(path: Path) -> tuple[Path, Path]:
    if path.is_dir():
        return path / "histogram.csv", path
    return path, path.parent


def cmd_fit(args) -> int:
    started = time.time()
    src = Path(args.input)
    if args.model == "lorentz":
        return _fit_scan(args, src, started)
    hpath, run = _hist_input(src)
    try:
        hist = CorrelationHistogram.from_csv(hpath)
    except OSError as exc:
        raise IOFailure(f"cannot read {hpath}: {exc}") from None
    man = _sim_manifest(run)
    sim = (man or {}).get("sim_config", {})
    period = args.period if args.period is not None else sim.get("period")
    if period is None:
        raise ConfigError("--period is required when the run has no simulation manifest")
    jitter = args.jitter if args.jitter is not None else sim.get("detector_jitter", 0.0)
    out = _out_dir(args) if args.out else run
    lines = [f"model: {args.model}", f"histogram: {hpath}", f"period_ns: {period}", f"jitter_ps: {jitter}"]
    if args.model == "hbt":
        r = fit_hbt(hist, period, jitter=jitter)
        payload = {"t1": r.t1, "t1_err": r.t1_err, "g2_zero_area": r.g2_zero_area,
                   "g2_zero_err": r.g2_zero_err, "chi2_per_dof": r.chi2_per_dof}
        jpath, cpath = out / "fit_hbt.json", out / "fit_hbt.csv"
        jpath.write_text(json.dumps(payload, indent=2) + "\n")
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "value", "error"])
            w.writerow(["t1", f"{r.t1:.9g}", f"{r.t1_err:.6g}"])
            w.writerow(["g2_zero_area", f"{r.g2_zero_area:.9g}", f"{r.g2_zero_err:.6g}"])
            w.writerow(["chi2_per_dof", f"{r.chi2_per_dof:.6g}", ""])
        lines += [f"t1_ns: {r.t1:.4f} +/- {r.t1_err:.4f}",
                  f"g2_zero_area: {r.g2_zero_area:.4f} +/- {r.g2_zero_err:.4f}",
                  f"chi2_per_dof: {r.chi2_per_dof:.3f}"]
    else:
        r = fit_hom(hist, period, fixed=_parse_fixed(args.fix), jitter=jitter, resolution=args.resolution)
        jpath, cpath = out / "fit_hom.json", out / "fit_hom.csv"
        r.to_json(jpath)
        r.to_csv(cpath)
        for n in HOM_PARAMS:
            lines.append(f"{n}: {getattr(r, n):.6g} +/- {r.errors[n]:.3g}")
        lines += [f"chi2_per_dof: {r.chi2_per_dof:.3f}",
                  f"resolution_limited: {r.resolution_limited}",
                  f"detuning_identifiable: {r.detuning_identifiable}"]
    rpath = out / f"fit_{args.model}_report.txt"
    rpath.write_text("\n".join(lines) + "\n")
    _write_manifest(out, f"fit_{args.model}", args, [hpath], [jpath, cpath, rpath], None, None, started)
    print("\n".join(lines))
    return EXIT_OK


def _read_scan(path: Path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from None
    freqs = np.array([float(v) for v in rows[0][2:]])
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return freqs, data[:, 0], data[:, 1], data[:, 2:]


def _fit_scan(args, src: Path, started) -> int:
    path = src / "scan.csv" if src.is_dir() else src
    run = path.parent
    out = _out_dir(args) if args.out else run
    freqs, times, _, counts = _read_scan(path)
    fits = [fit_lorentzian(freqs, row) for row in counts]
    ws = wandering_stats(fits)
    p = out / "scan_fits.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_time_s", "center_MHz", "center_err_MHz", "fwhm_MHz", "fwhm_err_MHz"])
        for t, f in zip(times, fits):
            e = f.errors
            w.writerow([f"{t:.6f}", f"{f.center:.6f}", f"{e[0]:.6f}", f"{f.fwhm:.6f}", f"{e[1]:.6f}"])
    fw = np.array([f.fwhm for f in fits])
    lines = [f"rows: {len(fits)}",
             f"fwhm_MHz: {np.mean(fw):.2f} +/- {np.std(fw, ddof=1):.2f} (row spread)",
             f"wander_sigma_MHz: {ws.sigma:.2f} +/- {ws.sigma_err:.2f}",
             "center_histogram: " + " ".join(str(int(c)) for c in ws.counts),
             "center_histogram_edges_MHz: " + " ".join(f"{e:.1f}" for e in ws.edges)]
    rpath = out / "fit_lorentz_report.txt"
    rpath.write_text("\n".join(lines) + "\n")
    _write_manifest(out, "fit_lorentz", args, [path], [p, rpath], None, None, started)
    print("\n".join(lines))
    return EXIT_OK


def cmd_track(args) -> int:
    started = time.time()
    tags, man, paths = _load_tags(args.inputs)
    sim = (man or {}).get("sim_config", {})
    period = args.period if args.period is not None else sim.get("period")
    if period is None:
        raise ConfigError("--period is required when the run has no simulation manifest")
    series = sliding_visibility(tags, _corr_config(args), period)
    out = _out_dir(args)
    p = out / "visibility.csv"
    series.to_csv(p)
    _write_manifest(out, "track", args, paths, [p], None,
                    {"window_s": args.window, "step_s": args.step, "n_windows": len(series.points)}, started)
    print(f"{len(series.points)} windows -> {p}")
    return EXIT_OK


def cmd_tune(args) -> int:
    started = time.time()
    raw, text, name = _load_raw(args)
    if raw.get("kind", "tuning") != "tuning":
        raise ConfigError(f"{name}: not a tuning config (kind={raw.get('kind')!r})")
    _check_keys(raw, TUNE_KEYS, text, name)
    try:
        sp = StarkShiftParams(raw.get("max_shift", 75.0), raw.get("dose_scale", 1.0), int(raw.get("sign", -1)))
        e1 = EmitterParams(4.0, fwhm=50.0, center_freq=raw.get("nu1_MHz", 60e3))
        e2 = EmitterParams(4.0, fwhm=50.0, center_freq=raw.get("nu2_MHz", 0.0))
        res = auto_tune(e1, e2, sp, raw.get("probe_noise", 0.0), raw.get("step_dose", 0.05),
                        int(raw.get("rng_seed", 0)), tolerance=raw.get("tolerance", 50.0),
                        dose_budget=raw.get("dose_budget", 5.0), max_steps=int(raw.get("max_steps", 500)),
                        probe_repeats=int(raw.get("probe_repeats", 4)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None
    out = _out_dir(args)
    p = out / "tuning.csv"
    res.to_csv(p)
    _write_manifest(out, "tune", args, [], [p], raw.get("rng_seed", 0),
                    {"success": res.success, "reason": res.reason, "steps": res.n_steps,
                     "final_detuning_MHz": res.final_detuning}, started)
    print(f"tuning {'succeeded' if res.success else 'failed'} ({res.reason}) after {res.n_steps} probes; "
          f"final detuning {res.final_detuning:.1f} MHz -> {p}")
    return EXIT_OK if res.success else EXIT_NUMERIC


def _hom_prediction(sim: dict) -> tuple[float, float] | None:
    if sim.get("mode") != "HOM_DISTINCT":
        return None
    e1, e2 = (EmitterParams(**e) for e in sim["emitters"])
    d1, d2 = sim.get("diffusion") or [{"sigma": 0.0}, {"sigma": 0.0}]
    params = HomModelParams(e1, e2, detuning=e1.center_freq - e2.center_freq, v_factor=sim.get("v_factor", 1.0),
                            sigma1=d1["sigma"], sigma2=d2["sigma"], period=sim["period"])
    return predict_visibility(params), math.sqrt(d1["sigma"] ** 2 + d2["sigma"] ** 2)


def cmd_report(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise IOFailure(f"{run} is not a directory")
    out = _out_dir(args) if args.out else run
    man = _sim_manifest(run) or {}
    sim = man.get("sim_config", {})
    rows: list[tuple[str, str, str, str]] = []     # quantity, measured, error, predicted
    lines = [f"run: {run}", f"tool_version: {__version__}"]
    if sim:
        lines.append(f"mode: {sim['mode']}, duration_s: {sim['duration']}, seed: {sim['rng_seed']}")
        for i, e in enumerate(sim["emitters"], 1):
            lines.append(f"emitter {i}: t1={e['t1']} ns, fwhm={e['fwhm']:.2f} MHz, t2={e['t2']:.3f} ns, "
                         f"max V={max_visibility(e['t1'], e['t2']):.3f}")
    hpath = run / "histogram.csv"
    if hpath.exists() and sim:
        hist = CorrelationHistogram.from_csv(hpath)
        n_max = max(2, min(13, int(hist.delays_ns.max() / sim["period"] - 0.5)))
        est = visibility_from_areas(peak_areas(hist, sim["period"], n_max))
        pred = _hom_prediction(sim)
        rows.append(("visibility", f"{est.visibility:.4f}", f"{est.visibility_err:.4f}",
                     f"{pred[0]:.4f}" if pred else ""))
        rows.append(("v_factor_center_bin", f"{est.v_factor:.4f}", f"{est.v_factor_err:.4f}",
                     f"{sim.get('v_factor', 1.0):.4f}"))
        if pred:
            lines.append(f"prediction uses the stationary wander sigma_joint={pred[1]:.1f} MHz")
    for model in ("hom", "hbt"):
        fpath = run / f"fit_{model}.json"
        if fpath.exists():
            fit = json.loads(fpath.read_text())
            if model == "hom":
                truth = {}
                if sim.get("mode") == "HOM_DISTINCT":
                    e1, e2 = sim["emitters"]
                    truth = {"detuning": abs(e1["center_freq"] - e2["center_freq"]),
                             "v_factor": sim.get("v_factor", 1.0)}
                    if "t1" in fit["free"]:
                        truth["t1_1"] = truth["t1_2"] = 0.5 * (e1["t1"] + e2["t1"])
                    if "t2" in fit["free"]:
                        truth["t2_1"] = truth["t2_2"] = 2.0 / (1.0 / e1["t2"] + 1.0 / e2["t2"])
                for n in HOM_PARAMS:
                    err = fit["errors"].get(n)
                    rows.append((f"fit_{n}", f"{fit[n]:.6g}", "" if err is None else f"{err:.3g}",
                                 f"{truth[n]:.6g}" if n in truth else ""))
                rows.append(("fit_hom_chi2_per_dof", f"{fit['chi2_per_dof']:.4f}", "", ""))
                rows.append(("fit_hom_resolution_limited", str(int(fit["resolution_limited"])), "", ""))
            else:
                t1 = sim["emitters"][0]["t1"] if sim else None
                rows.append(("fit_t1", f"{fit['t1']:.6g}", f"{fit['t1_err']:.3g}", f"{t1}" if t1 else ""))
                rows.append(("g2_zero_area", f"{fit['g2_zero_area']:.5f}", f"{fit['g2_zero_err']:.5f}", "0"))
    vpath = run / "visibility.csv"
    if vpath.exists():
        data = np.loadtxt(vpath, delimiter=",", skiprows=1, ndmin=2)
        vis, err = data[:, 1], data[:, 2]
        anomalies = np.flatnonzero(vis < -3 * err)
        rows.append(("track_windows", str(len(vis)), "", ""))
        rows.append(("track_visibility_mean", f"{vis.mean():.4f}", f"{vis.std(ddof=1) if len(vis) > 1 else 0:.4f}", ""))
        rows.append(("track_visibility_max", f"{vis.max():.4f}", "", ""))
        rows.append(("track_anomalies_below_zero_3sigma", str(len(anomalies)), "", "0"))
        for k in anomalies:
            lines.append(f"ANOMALY: window starting {data[k, 0]:.0f} s has V={vis[k]:.3f} +/- {err[k]:.3f}")
    tpath = run / "tuning.csv"
    if tpath.exists():
        data = np.loadtxt(tpath, delimiter=",", skiprows=1, ndmin=2)
        rows.append(("tuning_probes", str(len(data)), "", ""))
        rows.append(("tuning_total_dose", f"{data[:, 1].sum():.6g}", "", ""))
        rows.append(("tuning_final_measured_detuning_MHz", f"{data[-1, 4]:.3f}", "", "|x| < 50"))
    fpath = run / "scan_fits.csv"
    if fpath.exists():
        data = np.loadtxt(fpath, delimiter=",", skiprows=1, ndmin=2)
        scan = man.get("scan_config", {})
        em = man.get("emitter", {})
        rows.append(("scan_rows", str(len(data)), "", ""))
        rows.append(("scan_fwhm_MHz", f"{data[:, 3].mean():.3f}", f"{data[:, 3].std(ddof=1) if len(data) > 1 else 0:.3f}",
                     f"{em['fwhm']:.3f}" if "fwhm" in em else ""))
        if len(data) >= 10:
            ws = wandering_stats([SimpleNamespace(center=c) for c in data[:, 1]])
            rows.append(("scan_wander_sigma_MHz", f"{ws.sigma:.3f}", f"{ws.sigma_err:.3f}",
                         f"{scan['sigma']:.3f}" if "sigma" in scan else ""))
    spath = run / "fit_lorentz_report.txt"
    if spath.exists():
        lines.append("excitation scan:")
        lines += ["  " + ln for ln in spath.read_text().splitlines()]
    if not rows and not sim:
        raise ConfigError(f"{run}: nothing to report (no manifest or analysis outputs)")
    csv_path = out / "summary.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "measured", "error", "predicted"])
        w.writerows(rows)
    width = max((len(r[0]) for r in rows), default=0)
    lines.append("")
    lines.append(f"{'quantity':<{width}}  {'measured':>12}  {'error':>10}  {'predicted':>10}")
    lines += [f"{q:<{width}}  {m:>12}  {e:>10}  {p:>10}" for q, m, e, p in rows]
    txt = out / "report.txt"
    txt.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="homtrack", description=__doc__)
    ap.add_argument("--version", action="version", version=f"homtrack {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def corr_opts(p):
        p.add_argument("--bin-width", type=int, default=500, metavar="PS")
        p.add_argument("--max-lag", type=float, default=700.0, metavar="NS")

    p = sub.add_parser("simulate", help="simulate tags (or an excitation scan) from a config")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--preset", metavar="NAME")
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="cross-correlation histogram of a run or tag files")
    p.add_argument("inputs", nargs="+", help="run directory or tag files")
    corr_opts(p)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("fit", help="fit a histogram (hom, hbt) or an excitation scan (lorentz)")
    p.add_argument("input", help="run directory, histogram.csv or scan.csv")
    p.add_argument("--model", choices=("hom", "hbt", "lorentz"), default="hom")
    p.add_argument("--fix", action="append", metavar="PARAM=VALUE")
    p.add_argument("--period", type=float, metavar="NS")
    p.add_argument("--jitter", type=float, metavar="PS", help="per-detector timing std")
    p.add_argument("--resolution", choices=("full", "bin", "none"), default="full")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("track", help="sliding-window visibility series")
    p.add_argument("inputs", nargs="+", help="run directory or tag files")
    corr_opts(p)
    p.add_argument("--window", type=float, default=30.0, metavar="S")
    p.add_argument("--step", type=float, default=1.0, metavar="S")
    p.add_argument("--period", type=float, metavar="NS")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("tune", help="run the Stark-tuning protocol")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--preset", metavar="NAME")
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", help="text and CSV summary of a run directory")
    p.add_argument("run", help="run directory")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TagFormatError, IOFailure, OSError) as exc:
        print(f"homtrack: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FitError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"homtrack: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        print(f"homtrack: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
