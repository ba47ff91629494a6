"""Command-line interface.

Every run writes its outputs plus a ``manifest.json`` into ``--out``. The
manifest records the normalized command line, input and config hashes and
the tool version, and ``rerun`` replays it. Results never depend on wall
clock time or thread count.

Exit codes: 0 success, 1 runtime failure, 2 input or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, get_float, get_int, load_config
from .ctrlsim import (
    TRACE_COLUMNS,
    TRACE_UNITS,
    InstabilityError,
    SettlingError,
    frf_welch,
    noise_profile,
    params_from_config,
    simulate_loop,
    step_metrics,
    step_profile,
)
from .dynamics import PARAM_NAMES, SimulationError, TrajectoryError
from .gaitproc import (
    EventError,
    IQROutlierFilter,
    StrideError,
    normalize,
    prepare_perturbation,
    read_recording,
    read_swing_table,
    segment_strides,
    transparency_metrics,
    write_swing_table,
)
from .ident import IdentificationError, IdentProblem, identify
from .model import JOINTS, BodyModel, default_model
from .synthval import ValidationConfig, run_validation, write_validation
from .tables import TableError, write_keyvalue, write_table

log = logging.getLogger("swing_impedance")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
INPUT_ERRORS = (ConfigError, TableError, StrideError, EventError, TrajectoryError,
                FileNotFoundError, KeyError, ValueError)
RUNTIME_ERRORS = (SimulationError, IdentificationError, InstabilityError, RuntimeError)


class UsageError(Exception):
    """Bad command-line usage (exit code 2)."""


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_cfg(args) -> dict:
    return load_config(args.config) if args.config else {}


def _model(cfg) -> BodyModel:
    if any(k.startswith("model.") for k in cfg):
        return BodyModel.from_dict(cfg)
    return default_model()


def write_manifest(args, argv, inputs, cfg):
    out = Path(args.out)
    manifest = {
        "subcommand": args.command,
        "argv": list(argv),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "config": args.config,
        "config_hash": config_hash(cfg),
        "seed": args.seed,
        "output_dir": str(out),
        "version": __version__,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _ensemble_table(path, ens_angles, ens_force):
    cols = {"percent": ens_angles.percent}
    units = {"percent": "%"}
    for j, name in enumerate(JOINTS):
        cols[f"{name}_mean"] = ens_angles.mean[:, j]
        cols[f"{name}_std"] = ens_angles.std[:, j]
        units[f"{name}_mean"] = units[f"{name}_std"] = "rad"
    cols["force_mean"] = ens_force.mean[:, 0]
    cols["force_std"] = ens_force.std[:, 0]
    units["force_mean"] = units["force_std"] = "N"
    write_table(path, cols, units)


def _process_recording(path, cfg, out, tag):
    """Strides, events, outlier log and ensembles for one recording."""
    rec = read_recording(path)
    cutoff = get_float(cfg, "preprocess.force_cutoff", 40.0, minimum=0.0)
    if cutoff > 0:
        if cutoff >= rec.fs / 2:
            raise ConfigError(f"preprocess.force_cutoff {cutoff} Hz is not below the "
                              f"Nyquist frequency of {path}")
        rec = rec.filtered_forces(cutoff)
    strides = segment_strides(
        rec, threshold=get_float(cfg, "preprocess.grf_threshold", 20.0),
        debounce=get_float(cfg, "preprocess.debounce", 0.050, minimum=0.0),
    )
    write_table(out / f"{tag}_events.csv", {
        "stride": range(len(strides)),
        "heel_strike": [s.start_index for s in strides],
        "toe_off": [s.start_index + s.toe_off for s in strides],
        "heel_strike_time": [rec.t[s.start_index] for s in strides],
        "swing_duration": [s.swing_duration for s in strides],
        "perturbed": [int(s.perturbed) for s in strides],
        "onset": [s.onset if s.perturbed else np.nan for s in strides],
    }, {"heel_strike_time": "s", "swing_duration": "s", "onset": "s"})
    write_swing_table(out / f"{tag}_strides.csv", strides)

    idx = [k for k, s in enumerate(strides) if not s.perturbed]
    plain = [strides[k] for k in idx]
    if not plain:
        raise StrideError(f"{path}: no unperturbed strides for the gait ensemble")
    n_points = get_int(cfg, "preprocess.n_points", 500, minimum=10)
    ens = normalize(plain, n_points)
    ens_f = normalize(plain, n_points, channel="force")
    ens_f.data = ens_f.data[:, :, :1]
    if len(ens) >= 4:
        filt = IQROutlierFilter().fit(ens)
        frac = filt.outside_fraction(ens)
        keep = filt.predict(ens) == 1
    else:
        frac, keep = np.zeros(len(ens)), np.ones(len(ens), bool)
    write_table(out / f"{tag}_outliers.csv", {
        "stride": idx, "outside_fraction": frac, "kept": keep.astype(int),
    })
    ens, ens_f = ens.subset(keep), ens_f.subset(keep)
    _ensemble_table(out / f"{tag}_ensemble.csv", ens, ens_f)
    return ens, ens_f


def cmd_preprocess(args, cfg):
    out = Path(args.out)
    if args.baseline and len(args.baseline) != len(args.recording):
        raise UsageError("give one --baseline recording per device recording")
    device, forces, baseline = [], [], []
    for k, path in enumerate(args.recording):
        ens, ens_f = _process_recording(path, cfg, out, f"p{k + 1}_device")
        device.append(ens)
        forces.append(ens_f)
    for k, path in enumerate(args.baseline or ()):
        ens, _ = _process_recording(path, cfg, out, f"p{k + 1}_baseline")
        baseline.append(ens)
    inputs = list(args.recording) + list(args.baseline or ())
    if not baseline:
        return inputs
    rep = transparency_metrics(baseline, device, forces)
    write_keyvalue(out / "transparency.txt", rep.as_dict())
    write_table(out / "transparency.csv", {
        "joint": list(JOINTS), "rmse": rep.rmse, "rmse_sd": rep.rmse_sd,
        "isv_ave": rep.isv_ave, "pass": rep.passed.astype(int),
    }, {"rmse": "rad", "rmse_sd": "rad", "isv_ave": "rad"})
    for j, name in enumerate(JOINTS):
        verdict = "PASS" if rep.passed[j] else "FAIL"
        print(f"{name:6s} RMSE {rep.rmse[j]:.4f} rad  ISV_ave {rep.isv_ave[j]:.4f} rad  "
              f"{verdict}")
    print(f"force  RMS {rep.force_rms:.2f} N  max |F| {rep.force_max:.2f} N")
    return inputs


def cmd_identify(args, cfg):
    out = Path(args.out)
    model = _model(cfg)
    strides = []
    for path in args.strides:
        strides.extend(read_swing_table(path))
    data = prepare_perturbation(strides, args.onset)
    problem = IdentProblem.from_data(model, data.unperturbed, data.perturbed, args.onset)
    problem.validate()
    n_restarts = get_int(cfg, "identify.n_restarts", 10, minimum=1)
    try:
        res = identify(problem, n_restarts=n_restarts, seed=args.seed, n_jobs=args.threads)
    except IdentificationError as exc:
        _dump_restarts(out / "restarts.csv", exc.restarts)
        raise
    items = {"onset": args.onset, "perturbed_strides": data.n_perturbed,
             "outliers_removed": data.n_outliers,
             "short_swings_removed": data.n_discarded_swing}
    items.update(res.summary())
    write_keyvalue(out / "ident_result.txt", items)
    cols = {"t": res.t}
    units = {"t": "s"}
    for j, name in enumerate(JOINTS):
        cols[f"measured_{name}"] = res.measured[:, j]
        cols[f"model_{name}"] = res.predicted[:, j]
        units[f"measured_{name}"] = units[f"model_{name}"] = "rad"
    idx = problem.indices
    cols["force_difference_x"] = (data.perturbed.force[idx, 0]
                                  - data.unperturbed.force[idx, 0])
    units["force_difference_x"] = "N"
    write_table(out / "ident_traces.csv", cols, units)
    _dump_restarts(out / "restarts.csv", res.restarts)
    p = res.params
    print(" ".join(f"{n}={v:.4g}" for n, v in zip(PARAM_NAMES, p.as_array())))
    print("VAF " + " ".join(f"{n}={v:.2f}%" for n, v in zip(JOINTS, res.vaf)))
    return list(args.strides)


def _dump_restarts(path, restarts):
    cols = {"restart": range(len(restarts))}
    for j, name in enumerate(PARAM_NAMES):
        cols[f"initial_{name}"] = [r.initial[j] for r in restarts]
    for j, name in enumerate(PARAM_NAMES):
        cols[f"final_{name}"] = [r.final[j] if r.final is not None else np.nan
                                 for r in restarts]
    cols["cost"] = [r.cost for r in restarts]
    cols["converged"] = [int(r.converged) for r in restarts]
    cols["nfev"] = [r.nfev for r in restarts]
    write_table(path, cols)


def cmd_validate(args, cfg):
    vc = ValidationConfig.from_dict(cfg, seed=args.seed, n_jobs=args.threads,
                                    full=True if args.full else None)
    def progress(done, total):
        log.info("combination %d/%d", done, total)

    rep = run_validation(vc, progress)
    write_validation(rep, args.out)
    st = rep.stats
    print(f"{st.n} combinations identified, {st.n_failed} failed")
    for label, vals in st.as_rows().items():
        print(f"{label:11s} " + " ".join(f"{n}={v:+.4g}" for n, v in zip(PARAM_NAMES, vals)))
    return []


def _controller_profile(cfg, scenario, fs, seed):
    kind = scenario or cfg.get("scenario.kind", "step")
    if kind == "step":
        return kind, step_profile(
            get_float(cfg, "scenario.amplitude", 40.0),
            get_float(cfg, "scenario.duration", 4.0, minimum=0.1),
            get_float(cfg, "scenario.delay", 0.1, minimum=0.0), fs)
    if kind == "noise":
        return kind, noise_profile(
            get_float(cfg, "scenario.duration", 60.0, minimum=1.0),
            get_float(cfg, "scenario.cutoff", 60.0, minimum=0.1),
            get_float(cfg, "scenario.peak_to_peak", 60.0, minimum=0.0), fs, seed)
    raise ConfigError(f"scenario.kind must be 'step' or 'noise', got {kind!r}")


def cmd_simulate_controller(args, cfg):
    out = Path(args.out)
    params, limits, plant = params_from_config(cfg)
    kind, fd = _controller_profile(cfg, args.scenario, params.fs, args.seed)
    try:
        trace = simulate_loop(params, limits, plant, fd)
    except InstabilityError as exc:
        if exc.trace is not None:
            write_table(out / "trace.csv", exc.trace.columns(), TRACE_UNITS)
        raise
    cols = trace.columns()
    write_table(out / "trace.csv", {k: cols[k] for k in TRACE_COLUMNS}, TRACE_UNITS)
    fm = trace.F_m
    items = {"scenario": kind, "force_rms": float(np.sqrt(np.mean(fm ** 2))),
             "force_max_abs": float(np.max(np.abs(fm))),
             "limiter_active_fraction": float(np.mean(trace.limiter_active))}
    if kind == "step":
        delay = get_float(cfg, "scenario.delay", 0.1)
        amp = get_float(cfg, "scenario.amplitude", 40.0)
        try:
            m = step_metrics(trace.t, fm, delay)
        except SettlingError as exc:
            raise InstabilityError(f"step response does not settle: {exc}") from None
        items.update(rise_time=m.rise_time, overshoot_percent=m.overshoot,
                     steady_state=m.steady_state,
                     steady_state_percent=100.0 * m.steady_state / amp if amp else np.nan)
    else:
        fr = frf_welch(fd, fm, params.fs,
                       nperseg=get_int(cfg, "frf.nperseg", 5000, minimum=16),
                       noverlap=get_int(cfg, "frf.noverlap", 50, minimum=0))
        write_table(out / "frf.csv", {
            "f": fr.f, "magnitude": np.abs(fr.H), "magnitude_db": fr.magnitude_db,
            "phase": np.unwrap(np.angle(fr.H)), "coherence": fr.coherence,
        }, {"f": "Hz", "magnitude_db": "dB", "phase": "rad"})
        items["bandwidth"] = fr.bandwidth
    write_keyvalue(out / "metrics.txt", items)
    for k, v in items.items():
        print(f"{k} = {v if isinstance(v, str) else format(v, '.6g')}")
    return []


def cmd_report(args, cfg):
    """Print a run directory's manifest and result files."""
    src = Path(args.run_dir)
    man = src / "manifest.json"
    if not man.exists():
        raise FileNotFoundError(f"{man}: no manifest, not a run directory")
    info = json.loads(man.read_text())
    lines = [f"run: {info['subcommand']} (version {info['version']}, seed {info['seed']})",
             f"command: {' '.join(info['argv'])}"]
    for name in ("transparency.txt", "ident_result.txt", "metrics.txt",
                 "validation_summary.csv"):
        p = src / name
        if p.exists():
            lines.append(f"--- {name}")
            lines.extend(p.read_text().splitlines())
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if Path(args.out) != src:
        (Path(args.out) / "report.txt").write_text(text)
    return [man]


def cmd_rerun(args, cfg):
    info = json.loads(Path(args.manifest).read_text())
    argv = list(info["argv"])
    if args.out_override:
        argv = _replace_out(argv, args.out_override)
    return main(argv)


def _replace_out(argv, out):
    argv = list(argv)
    if "--out" in argv:
        argv[argv.index("--out") + 1] = out
    else:
        argv = ["--out", out] + argv
    return argv


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="swing-impedance",
        description="Swing-leg joint impedance identification and perturbator tools.",
    )
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--full", action="store_true", help="validate: run all 729 combinations")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="gait events, strides, ensembles, transparency")
    s.add_argument("recording", nargs="+", help="device-trial recording(s), one per participant")
    s.add_argument("--baseline", nargs="+", help="no-device recording(s), same order")

    s = sub.add_parser("identify", help="estimate joint stiffness and damping")
    s.add_argument("strides", nargs="+", help="swing stride table(s) from preprocess")
    s.add_argument("--onset", type=float, required=True,
                   help="perturbation onset after toe-off [s]")

    sub.add_parser("validate", help="synthetic identification validation")

    s = sub.add_parser("simulate-controller", help="simulate the force-control loop")
    s.add_argument("--scenario", choices=("step", "noise"),
                   help="override scenario.kind from the config")

    s = sub.add_parser("report", help="summarize a run directory")
    s.add_argument("run_dir")

    s = sub.add_parser("rerun", help="replay a run from its manifest.json")
    s.add_argument("manifest")
    s.add_argument("--to", dest="out_override", help="write into this directory instead")
    return p


COMMANDS = {
    "preprocess": cmd_preprocess,
    "identify": cmd_identify,
    "validate": cmd_validate,
    "simulate-controller": cmd_simulate_controller,
    "report": cmd_report,
    "rerun": cmd_rerun,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = _load_cfg(args)
        if args.command == "rerun":
            return cmd_rerun(args, cfg)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        inputs = COMMANDS[args.command](args, cfg)
        if not (args.command == "report" and Path(args.out) == Path(args.run_dir)):
            write_manifest(args, argv, inputs, cfg)
    except (UsageError, *INPUT_ERRORS) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
