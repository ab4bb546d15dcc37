"""Command-line harness: capture generation, recovery, suites, plot data.

Exit status is nonzero when any run is flagged non-converged, so suites can
gate CI.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .acquisition import capture, load_capture_csv, save_capture_csv
from .exact import recover_exact
from .harness import (
    build_capture_config,
    build_model,
    emit_plot_data,
    load_spec,
    load_suite,
    run_experiment,
    run_suite,
    write_diagnostics,
    write_report_csv,
    _robust_config,
)
from .robust import recover_robust


def _add_common(p):
    p.add_argument("--spec", required=True, help="experiment spec (TOML)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--noiseless", action="store_true",
                   help="zero noise and fold jitter, disable quantization")


def _load(args):
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    if args.noiseless:
        spec = spec.noiseless()
    return spec


def _cmd_capture(args) -> int:
    spec = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cap = capture(build_model(spec), build_capture_config(spec))
    path = out / f"{Path(args.spec).stem}_capture.csv"
    save_capture_csv(cap, path)
    print(f"wrote {path}")
    return 0


def _cmd_recover(args) -> int:
    spec = _load(args)
    if args.method:
        spec = spec.__class__(**{**spec.__dict__, "method": args.method})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.capture:
        cap = load_capture_csv(args.capture, build_capture_config(spec))
        model = build_model(spec)
        if spec.method == "exact":
            est = recover_exact(cap, model.K)
            converged = True
        else:
            result = recover_robust(cap, model.K, _robust_config(spec))
            est = result.estimate
            converged = result.converged
        f_est = sorted((est.omega / (2 * 3.141592653589793))[est.omega > 0] / 1000.0)
        print("f_est_khz:", ";".join(f"{x:.6f}" for x in f_est))
        report = None
    else:
        report = run_experiment(spec)
        converged = report.converged
        write_report_csv([report], out / "report.csv")
        write_diagnostics([report], out / "diagnostics.json")
        print(f"{report.spec_id}: e2_khz2={report.e2_khz2:.3e} converged={report.converged}")
    return 0 if converged else 1


def _cmd_suite(args) -> int:
    specs = load_suite(args.spec)
    if args.seed is not None:
        specs = [s.with_seed(args.seed + i) for i, s in enumerate(specs)]
    if args.noiseless:
        specs = [s.noiseless() for s in specs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = run_suite(specs)
    write_report_csv(reports, out / "report.csv")
    write_diagnostics(reports, out / "diagnostics.json")
    for r in reports:
        print(f"{r.spec_id}: e2_khz2={r.e2_khz2:.3e} converged={r.converged}")
    print(f"wrote {out / 'report.csv'}")
    return 0 if all(r.converged for r in reports) else 1


def _cmd_plotdata(args) -> int:
    spec = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(spec)
    cap = capture(model, build_capture_config(spec))
    est = None
    converged = True
    if spec.method == "exact":
        est = recover_exact(cap, model.K)
    else:
        result = recover_robust(cap, model.K, _robust_config(spec))
        est = result.estimate
        converged = result.converged
    stem = Path(args.spec).stem
    emit_plot_data(cap, est, out / f"{stem}_waveform.csv", out / f"{stem}_phasors.csv")
    print(f"wrote {out / (stem + '_waveform.csv')} and {out / (stem + '_phasors.csv')}")
    return 0 if converged else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="foldspec",
        description="Folded (modulo-ADC) sub-Nyquist spectral estimation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capture", help="generate and save a folded capture")
    _add_common(p)
    p.set_defaults(func=_cmd_capture)

    p = sub.add_parser("recover", help="run recovery and save a report")
    _add_common(p)
    p.add_argument("--capture", default=None, help="load a saved capture CSV instead")
    p.add_argument("--method", choices=["exact", "robust"], default=None)
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("suite", help="run a spec collection")
    _add_common(p)
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("plotdata", help="emit plot-ready CSV series")
    _add_common(p)
    p.set_defaults(func=_cmd_plotdata)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
