"""Experiment orchestration: config-driven runs, metrics, report and plot files.

Experiment specs are TOML with explicit units in key names (f_s_hz, t_d_us,
lambda0_v) so table rows translate without unit bugs.  A suite file holds an
``[[experiment]]`` array of such specs.  Reports are CSV rows with the fixed
header below; ground truth reaches the report only through the evaluation
boundary (recovery sees folded data alone).
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .acquisition import CaptureConfig, MultiChannelCapture, capture
from .exact import SpectralEstimate, recover_exact
from .robust import RobustConfig, estimate_sigma, recover_robust
from .signal import SamplingGrid, SinusoidalModel, evaluate_signal, mse, peak_amplitude, sample

__all__ = [
    "ExperimentSpec",
    "RunReport",
    "REPORT_HEADER",
    "load_spec",
    "load_suite",
    "default_alpha",
    "build_model",
    "build_capture_config",
    "run_experiment",
    "run_suite",
    "emit_plot_data",
    "write_report_csv",
]

REPORT_HEADER = ("spec_id,N,f_s_hz,T_d_us,lambda0_v,lambda1_v,g_inf_v,"
                 "f_true_khz,f_est_khz,e2_khz2,einf_over_fs,mse_signal,"
                 "converged,iterations,seed")


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: model, capture settings, recovery method, seed."""

    name: str
    f_hz: tuple
    amplitudes_v: tuple
    phases_rad: tuple
    f_s_hz: float
    n_samples: tuple
    t_d_us: float
    lambda0_v: float
    lambda1_v: float
    bit_depth: int | None = None
    noise_sd_v: float = 0.0
    fold_jitter_v: float = 0.0
    peak_target_v: float | None = None
    method: str = "robust"
    robust_overrides: dict = field(default_factory=dict)
    seed: int = 0
    repetitions: int = 1

    def with_seed(self, seed: int, name: str | None = None) -> "ExperimentSpec":
        return replace(self, seed=seed, name=name or self.name)

    def noiseless(self) -> "ExperimentSpec":
        return replace(self, noise_sd_v=0.0, fold_jitter_v=0.0, bit_depth=None)


@dataclass(frozen=True)
class RunReport:
    """Metrics of one recovery run; frequency lists are sorted ascending."""

    spec_id: str
    n: int
    f_s_hz: float
    t_d_us: float
    lambda0_v: float
    lambda1_v: float
    g_inf_v: float
    f_true_khz: np.ndarray
    f_est_khz: np.ndarray
    e2_khz2: float
    einf_over_fs: float
    mse_signal: float
    converged: bool
    iterations: int
    seed: int
    wall_time_s: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def default_alpha(f_max_hz: float) -> float:
    """Distortion multiplier: 2 up to 1 kHz inputs, 4 above (fold-error regime)."""
    return 4.0 if f_max_hz > 1000.0 else 2.0


def _spec_from_tables(tables: dict, name: str) -> ExperimentSpec:
    model = tables.get("model", {})
    cap = tables.get("capture", {})
    rec = tables.get("recovery", {})
    run = tables.get("run", {})
    if not model.get("real_valued", True):
        raise ValueError("spec files describe real-valued models only")
    f_hz = tuple(float(x) for x in model["f_k_hz"])
    amps = model.get("amplitudes_v", [1.0] * len(f_hz))
    phases = model.get("phases_rad", [0.0] * len(f_hz))
    n = cap.get("n", cap.get("n_samples"))
    if n is None:
        raise ValueError("capture section needs a sample count 'n'")
    n_samples = (int(n),) * 4 if np.isscalar(n) else tuple(int(x) for x in n)
    overrides = {k: rec[k] for k in
                 ("alpha", "sigma_v", "j_max", "restarts", "outer_max", "e_max")
                 if k in rec}
    return ExperimentSpec(
        name=run.get("name", name),
        f_hz=f_hz,
        amplitudes_v=tuple(float(x) for x in amps),
        phases_rad=tuple(float(x) for x in phases),
        f_s_hz=float(cap["f_s_hz"]),
        n_samples=n_samples,
        t_d_us=float(cap["t_d_us"]),
        lambda0_v=float(cap["lambda0_v"]),
        lambda1_v=float(cap["lambda1_v"]),
        bit_depth=cap.get("bit_depth"),
        noise_sd_v=float(cap.get("noise_sd_v", 0.0)),
        fold_jitter_v=float(cap.get("fold_jitter_v", 0.0)),
        peak_target_v=model.get("peak_target_v"),
        method=rec.get("method", "robust"),
        robust_overrides=overrides,
        seed=int(run.get("seed", 0)),
        repetitions=int(run.get("repetitions", 1)),
    )


def load_spec(path) -> ExperimentSpec:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return _spec_from_tables(data, name=str(path))


def load_suite(path) -> list:
    """Load an [[experiment]] collection; an empty file is an empty suite."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    specs = []
    for i, tables in enumerate(data.get("experiment", [])):
        specs.append(_spec_from_tables(tables, name=f"experiment-{i}"))
    return specs


def build_model(spec: ExperimentSpec) -> SinusoidalModel:
    model = SinusoidalModel.from_real_sinusoids(spec.f_hz, spec.amplitudes_v, spec.phases_rad)
    if spec.peak_target_v is not None:
        duration = max(spec.n_samples) / spec.f_s_hz + spec.t_d_us * 1e-6
        peak = peak_amplitude(model, duration)
        model = model.scaled(spec.peak_target_v / peak)
    return model


def build_capture_config(spec: ExperimentSpec) -> CaptureConfig:
    return CaptureConfig(
        lam0=spec.lambda0_v,
        lam1=spec.lambda1_v,
        delay=spec.t_d_us * 1e-6,
        sample_rate=spec.f_s_hz,
        counts=spec.n_samples,
        bit_depth=spec.bit_depth,
        noise_sd=spec.noise_sd_v,
        fold_jitter=spec.fold_jitter_v,
        seed=spec.seed,
    )


def _robust_config(spec: ExperimentSpec) -> RobustConfig:
    ov = spec.robust_overrides
    alpha = float(ov.get("alpha", default_alpha(max(spec.f_hz))))
    sigma = ov.get("sigma_v")
    if sigma is None and spec.bit_depth is not None:
        sigma = estimate_sigma(spec.lambda0_v, spec.lambda1_v, spec.bit_depth, alpha)
    if sigma is None:
        sigma = 1e-8  # noiseless run: any positive tolerance works
    return RobustConfig(
        sigma=float(sigma),
        alpha=alpha,
        j_max=int(ov.get("j_max", 30)),
        restarts=int(ov.get("restarts", 15)),
        outer_max=int(ov.get("outer_max", 20)),
        e_max=int(ov.get("e_max", 10)),
        seed=spec.seed,
    )


def match_sorted_frequencies(f_true_khz, f_est_khz):
    """Nearest-neighbor assignment on the sorted lists (permutation safe)."""
    t = np.sort(np.asarray(f_true_khz, dtype=float))
    e = np.sort(np.asarray(f_est_khz, dtype=float))
    if e.size < t.size:
        e = np.concatenate([e, np.full(t.size - e.size, np.nan)])
    elif e.size > t.size:
        # keep the estimates closest to the true list
        keep = [int(np.nanargmin(np.abs(e - tv))) for tv in t]
        used = []
        for idx, tv in zip(keep, t):
            while idx in used:
                cand = np.abs(e - tv)
                cand[used] = np.inf
                idx = int(np.argmin(cand))
            used.append(idx)
        e = np.sort(e[used])
    return t, e


def _estimated_f_khz(est: SpectralEstimate, real_model: bool) -> np.ndarray:
    f_khz = np.asarray(est.omega) / (2 * np.pi) / 1000.0
    if real_model:
        f_khz = f_khz[f_khz > 0]
    return np.sort(f_khz)


def run_experiment(spec: ExperimentSpec) -> RunReport:
    """Capture, recover, and score one experiment; deterministic per seed."""
    t0 = time.perf_counter()
    model = build_model(spec)
    cfg = build_capture_config(spec)
    cap = capture(model, cfg)
    g_inf = peak_amplitude(model, max(cfg.counts) * cfg.T + cfg.delay)
    K = model.K
    diagnostics = {}
    converged = True
    iterations = 1
    est = None
    try:
        if spec.method == "exact":
            e_max = int(spec.robust_overrides.get("e_max", 10))
            est = recover_exact(cap, K, e_max=e_max)
        elif spec.method == "robust":
            result = recover_robust(cap, K, _robust_config(spec))
            est = result.estimate
            converged = result.converged
            iterations = result.iterations
            diagnostics = {
                "criterion_trace": list(result.criterion_trace),
                "objective_trace": list(result.objective_trace),
                "inner_iterations": result.fit.iteration,
                "restarts_used": result.fit.restarts_used,
            }
        else:
            raise ValueError(f"unknown recovery method {spec.method!r}")
    except ValueError as exc:
        converged = False
        diagnostics = {"error": str(exc)}

    f_true = np.sort(np.asarray(spec.f_hz, dtype=float)) / 1000.0
    if est is not None and est.omega is not None:
        f_est = _estimated_f_khz(est, real_model=True)
        f_true_m, f_est_m = match_sorted_frequencies(f_true, f_est)
        e2 = float(np.sum((f_true_m - f_est_m) ** 2))
        einf = float(np.max(np.abs(f_true_m - f_est_m)) * 1000.0 / spec.f_s_hz)
        grid = SamplingGrid(cfg.T, max(cfg.counts))
        rec_model = SinusoidalModel(est.amplitudes, est.omega)
        g_rec = evaluate_signal(rec_model, grid.times).real
        sig_mse = mse(g_rec, cap.truth[: grid.N].real)
        if not np.isfinite(e2):
            converged = False
    else:
        f_est_m = np.full(f_true.size, np.nan)
        f_true_m = f_true
        e2 = float("nan")
        einf = float("nan")
        sig_mse = float("nan")
        converged = False

    return RunReport(
        spec_id=spec.name,
        n=max(cfg.counts),
        f_s_hz=spec.f_s_hz,
        t_d_us=spec.t_d_us,
        lambda0_v=spec.lambda0_v,
        lambda1_v=spec.lambda1_v,
        g_inf_v=g_inf,
        f_true_khz=f_true_m,
        f_est_khz=f_est_m,
        e2_khz2=e2,
        einf_over_fs=einf,
        mse_signal=sig_mse,
        converged=converged,
        iterations=iterations,
        seed=spec.seed,
        wall_time_s=time.perf_counter() - t0,
        diagnostics=diagnostics,
    )


def run_suite(specs) -> list:
    """Run every spec (repetitions expanded); per-spec failures are isolated."""
    reports = []
    for i, spec in enumerate(specs):
        for rep in range(spec.repetitions):
            one = spec if spec.repetitions == 1 else spec.with_seed(
                spec.seed + rep, f"{spec.name}#r{rep}")
            try:
                reports.append(run_experiment(one))
            except Exception as exc:  # isolate misconfigured rows
                reports.append(RunReport(
                    spec_id=one.name, n=0, f_s_hz=one.f_s_hz, t_d_us=one.t_d_us,
                    lambda0_v=one.lambda0_v, lambda1_v=one.lambda1_v, g_inf_v=float("nan"),
                    f_true_khz=np.sort(np.asarray(one.f_hz)) / 1000.0,
                    f_est_khz=np.full(len(one.f_hz), np.nan),
                    e2_khz2=float("nan"), einf_over_fs=float("nan"),
                    mse_signal=float("nan"), converged=False, iterations=0,
                    seed=one.seed, diagnostics={"error": f"{type(exc).__name__}: {exc}"},
                ))
    return reports


def _fmt(x) -> str:
    return repr(float(x))


def _fmt_list(xs) -> str:
    return ";".join(_fmt(x) for x in np.asarray(xs, dtype=float))


def write_report_csv(reports, path):
    """Fixed-schema report table; byte-identical for identical runs."""
    lines = [REPORT_HEADER]
    for r in reports:
        lines.append(",".join([
            r.spec_id, str(r.n), _fmt(r.f_s_hz), _fmt(r.t_d_us),
            _fmt(r.lambda0_v), _fmt(r.lambda1_v), _fmt(r.g_inf_v),
            f"\"{_fmt_list(r.f_true_khz)}\"", f"\"{_fmt_list(r.f_est_khz)}\"",
            _fmt(r.e2_khz2), _fmt(r.einf_over_fs), _fmt(r.mse_signal),
            str(r.converged).lower(), str(r.iterations), str(r.seed),
        ]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_diagnostics(reports, path):
    payload = {r.spec_id: dict(r.diagnostics, wall_time_s=r.wall_time_s) for r in reports}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)


def emit_plot_data(cap: MultiChannelCapture, est: SpectralEstimate | None,
                   waveform_path, phasor_path=None):
    """Write plot-ready CSV series.

    Waveform file: one row per (channel, n) with the sample time, ground
    truth, folded value, and (when an estimate is given) the recovered model
    evaluated at that time.  Phasor file: one row per recovered component with
    Re c_k, Im c_k, w_k.
    """
    cfg = cap.config
    offsets = (0.0, 0.0, cfg.delay, cfg.delay)
    truth = (cap.truth, cap.truth, cap.truth_delayed, cap.truth_delayed)
    rec_model = None
    if est is not None and est.omega is not None:
        rec_model = SinusoidalModel(est.amplitudes, est.omega)
    lines = ["channel,n,t_seconds,g_true_v,y_folded_v,g_recovered_v"]
    for i, y in enumerate(cap.streams):
        for n, val in enumerate(np.asarray(y, dtype=float)):
            t = n * cfg.T + offsets[i]
            g_true = float(np.real(truth[i][n])) if truth[i] is not None else float("nan")
            if rec_model is not None:
                g_rec = float(np.real(evaluate_signal(rec_model, t)))
            else:
                g_rec = float("nan")
            lines.append(f"{i},{n},{t:.16e},{g_true:.16e},{val:.16e},{g_rec:.16e}")
    with open(waveform_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if phasor_path is not None and est is not None and est.omega is not None:
        plines = ["re_c,im_c,omega_rad_s"]
        for ck, wk in zip(est.amplitudes, est.omega):
            plines.append(f"{ck.real:.16e},{ck.imag:.16e},{wk:.16e}")
        with open(phasor_path, "w") as fh:
            fh.write("\n".join(plines) + "\n")
