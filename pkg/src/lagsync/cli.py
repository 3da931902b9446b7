"""Command-line front end.

Subcommands: simulate, certify, tune, reproduce-paper, max-delay.
Exit codes: 0 success (or certified), 2 not certified, 1 error.
Every run writes a manifest with the fully resolved configuration and
seeds; re-running from a manifest reproduces byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .certify import (
    assemble_closed_loop,
    check_feasibility,
    estimate_max_delay,
    load_certificate,
    save_certificate,
    search_certificate,
)
from .config import ConfigError, ExperimentConfig
from .fixtures import fixture_config
from .sim import integrate, write_profiles_csv, write_trace_csv
from .tuner import TuneFailure, run_algorithm1

MANIFEST_FORMAT_VERSION = 1


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _write_json(payload, path):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir, command, config, extra=None):
    payload = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "package_version": __version__,
        "command": command,
        "config": config.to_dict(),
    }
    if extra:
        payload.update(extra)
    _write_json(payload, os.path.join(out_dir, "manifest.json"))


def _resolve_config(args, default=None):
    if args.config is not None:
        config = ExperimentConfig.load(args.config)
    elif default is not None:
        config = default
    else:
        raise _UsageError("--config is required for this command")
    if getattr(args, "seed", None) is not None:
        config = config.with_master_seed(args.seed)
    return config


def _run_simulation(config, protocol_kind=None, disturbance=None):
    plant = config.build_plant()
    topology = config.build_topology()
    gains = config.build_gains()
    step, horizon = config.integrator_params()
    profiles = config.build_profiles(horizon)
    model = config.build_disturbance() if disturbance is None else disturbance
    followers, leader = config.build_initial_states()
    kind = config.protocol_kind if protocol_kind is None else protocol_kind
    trace = integrate(
        plant,
        topology,
        gains,
        profiles,
        model,
        followers,
        leader,
        kind,
        step,
        horizon,
        filter_scaling=config.filter_scaling,
    )
    return trace, profiles


def _emit_plots(out_dir, csv_paths):
    try:
        from .plots import plot_trace

        for path in csv_paths:
            stem = os.path.splitext(os.path.basename(path))[0]
            plot_trace(path, out_dir, stem=stem)
    except Exception as exc:  # plotting must never fail the run
        print(f"warning: plot emission failed: {exc}", file=sys.stderr)


def cmd_simulate(args):
    config = _resolve_config(args)
    out_dir = args.out or config.output.get("directory", "runs/simulate")
    os.makedirs(out_dir, exist_ok=True)
    trace, profiles = _run_simulation(config)
    trace_path = os.path.join(out_dir, "trace.csv")
    write_trace_csv(trace, trace_path)
    write_profiles_csv(profiles, os.path.join(out_dir, "profiles.csv"))
    summary = {
        "final_errors": trace.tracking_errors[-1].tolist(),
        "final_max_error": float(trace.tracking_errors[-1].max()),
        "max_abs_sliding": float(np.abs(trace.sliding).max()),
        "samples": int(trace.times.size),
        "protocol_kind": config.protocol_kind,
    }
    _write_json(summary, os.path.join(out_dir, "summary.json"))
    _write_manifest(out_dir, "simulate", config)
    if args.plots:
        _emit_plots(out_dir, [trace_path])
    print(f"simulate: wrote {trace_path} (final max error {summary['final_max_error']:.4g})")
    return 0


def cmd_certify(args):
    config = _resolve_config(args)
    out_dir = args.out or config.output.get("directory", "runs/certify")
    os.makedirs(out_dir, exist_ok=True)
    plant = config.build_plant()
    topology = config.build_topology()
    gains = config.build_gains()
    matrices = assemble_closed_loop(plant, topology, gains)
    tau = args.tau if args.tau is not None else config.delays["tau_star"]
    params = config.certify_params()
    result = search_certificate(
        matrices,
        tau,
        epsilon=params["epsilon"],
        budget=params["budget"],
        d_pin=params["d_pin"],
        d_chan=params["d_chan"],
        pin_core_third=params["pin_core_third"],
    )
    report_payload = {
        "tau": tau,
        "feasible": result.feasible,
        "iterations": result.iterations,
        "reason": result.reason,
        "best_margin": result.best_margin,
    }
    if result.feasible:
        cert_path = os.path.join(out_dir, "certificate.json")
        save_certificate(result.certificate, cert_path)
        recheck = check_feasibility(
            matrices,
            result.certificate,
            tau,
            params["epsilon"],
            params["pin_core_third"],
        )
        estimate = estimate_max_delay(
            matrices, result.certificate, params["pin_core_third"]
        )
        report_payload["report"] = recheck.to_dict()
        report_payload["delay_estimate"] = estimate.to_dict()
    _write_json(report_payload, os.path.join(out_dir, "lmi_report.json"))
    _write_manifest(out_dir, "certify", config, extra={"tau": tau})
    if result.feasible:
        print(
            f"certified at tau={tau:g}: margins "
            f"{['%.3e' % m for m in result.report.margins]}"
        )
        return 0
    print(f"not certified at tau={tau:g}: {result.reason}", file=sys.stderr)
    return 2


def cmd_tune(args):
    config = _resolve_config(args)
    out_dir = args.out or config.output.get("directory", "runs/tune")
    os.makedirs(out_dir, exist_ok=True)
    plant = config.build_plant()
    topology = config.build_topology()
    gains = config.build_gains()
    try:
        result = run_algorithm1(plant, topology, gains, config.tune_config())
    except TuneFailure as exc:
        payload = {"failed": True, "reason": str(exc)}
        if exc.search_result is not None:
            payload["best_margin"] = exc.search_result.best_margin
        _write_json(payload, os.path.join(out_dir, "tune_result.json"))
        _write_manifest(out_dir, "tune", config)
        print(f"tune failed: {exc}", file=sys.stderr)
        return 2
    save_certificate(result.certificate, os.path.join(out_dir, "certificate.json"))
    with open(os.path.join(out_dir, "iterations.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "tau", "objective", "feasible", "margin", "note"])
        for it in result.history:
            writer.writerow(
                [it.index, repr(it.tau), repr(it.objective), it.feasible, repr(it.margin), it.note]
            )
    payload = {
        "failed": False,
        "tau": result.tau,
        "objective": result.objective,
        "termination": result.termination,
        "gains": {
            "pin": {str(i + 1): v.tolist() for i, v in result.gains.k_pin.items()},
            "follower": {
                f"{i + 1},{j + 1}": v.tolist()
                for (i, j), v in result.gains.k_follower.items()
            },
        },
        "report": result.report.to_dict(),
    }
    _write_json(payload, os.path.join(out_dir, "tune_result.json"))
    _write_manifest(out_dir, "tune", config)
    print(
        f"tune: certified tau={result.tau:g} (objective {result.objective:.4g}); "
        f"{result.termination}"
    )
    return 0


def cmd_reproduce(args):
    variant = args.variant
    out_dir = args.out or f"runs/reproduce-{variant}"
    os.makedirs(out_dir, exist_ok=True)
    if variant == "fig2":
        config = fixture_config(protocol_kind="linear-only", disturbed=False)
    elif variant == "fig3":
        config = fixture_config(protocol_kind="linear-only", disturbed=True)
    elif variant == "fig4":
        config = fixture_config(protocol_kind="smoothed", disturbed=True)
    else:
        raise _UsageError(f"unknown variant {variant!r}")
    if args.seed is not None:
        config = config.with_master_seed(args.seed)

    csv_paths = []
    summary = {"variant": variant, "tau_star": config.delays["tau_star"]}
    if variant == "fig4":
        trace_s, profiles = _run_simulation(config)
        config_d = config
        trace_d, _ = _run_simulation(config_d, protocol_kind="discontinuous")
        path_s = os.path.join(out_dir, "trace_smoothed.csv")
        path_d = os.path.join(out_dir, "trace_discontinuous.csv")
        write_trace_csv(trace_s, path_s)
        write_trace_csv(trace_d, path_d)
        csv_paths += [path_s, path_d]
        # Settled-window control variation (second half for short runs).
        window = trace_s.times >= min(20.0, 0.5 * float(trace_s.times[-1]))
        tv_smooth = float(np.abs(np.diff(trace_s.controls[window], axis=0)).sum())
        tv_disc = float(np.abs(np.diff(trace_d.controls[window], axis=0)).sum())
        summary.update(
            {
                "final_max_error_smoothed": float(trace_s.tracking_errors[-1].max()),
                "final_max_error_discontinuous": float(trace_d.tracking_errors[-1].max()),
                "control_total_variation_smoothed": tv_smooth,
                "control_total_variation_discontinuous": tv_disc,
                "chattering_reduction_factor": tv_disc / tv_smooth if tv_smooth > 0.0 else None,
                "converged": bool(trace_s.tracking_errors[-1].max() < 0.1),
            }
        )
    else:
        trace, profiles = _run_simulation(config)
        path = os.path.join(out_dir, "trace.csv")
        write_trace_csv(trace, path)
        csv_paths.append(path)
        final = float(trace.tracking_errors[-1].max())
        summary["final_max_error"] = final
        summary["converged"] = bool(final < 0.05)
    write_profiles_csv(profiles, os.path.join(out_dir, "profiles.csv"))
    _write_json(summary, os.path.join(out_dir, "summary.json"))
    _write_manifest(out_dir, "reproduce-paper", config, extra={"variant": variant})
    if args.plots:
        _emit_plots(out_dir, csv_paths)
    print(f"reproduce-paper {variant}: {json.dumps(summary, sort_keys=True)}")
    return 0


def cmd_max_delay(args):
    config = _resolve_config(args)
    certificate = load_certificate(args.certificate)
    plant = config.build_plant()
    topology = config.build_topology()
    gains = config.build_gains()
    matrices = assemble_closed_loop(plant, topology, gains)
    params = config.certify_params()
    estimate = estimate_max_delay(matrices, certificate, params["pin_core_third"])
    print(json.dumps(estimate.to_dict(), sort_keys=True))
    return 0


def build_parser():
    parser = _Parser(
        prog="lagsync",
        description=(
            "Simulate and certify leader-following consensus under "
            "multiple time-varying communication delays."
        ),
    )
    parser.add_argument("--version", action="version", version=f"lagsync {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one closed-loop simulation")
    p_sim.add_argument("--config", required=False, help="experiment config (JSON)")
    p_sim.add_argument("--seed", type=int, help="master seed overriding delay/disturbance seeds")
    p_sim.add_argument("--out", help="output directory")
    p_sim.add_argument("--plots", action="store_true", help="emit PNG plots from the CSVs")
    p_sim.set_defaults(func=cmd_simulate)

    p_cert = sub.add_parser("certify", help="search and verify a delay-robustness certificate")
    p_cert.add_argument("--config", required=False)
    p_cert.add_argument("--tau", type=float, help="delay bound to certify (default: delays.tau_star)")
    p_cert.add_argument("--seed", type=int)
    p_cert.add_argument("--out", help="output directory")
    p_cert.set_defaults(func=cmd_certify)

    p_tune = sub.add_parser("tune", help="optimize gains for the largest certified delay bound")
    p_tune.add_argument("--config", required=False)
    p_tune.add_argument("--seed", type=int)
    p_tune.add_argument("--out", help="output directory")
    p_tune.set_defaults(func=cmd_tune)

    p_rep = sub.add_parser("reproduce-paper", help="run a bundled benchmark scenario")
    p_rep.add_argument("--variant", required=True, choices=("fig2", "fig3", "fig4"))
    p_rep.add_argument("--seed", type=int)
    p_rep.add_argument("--out", help="output directory")
    p_rep.add_argument("--plots", action="store_true")
    p_rep.set_defaults(func=cmd_reproduce)

    p_max = sub.add_parser("max-delay", help="print the delay-bound ratios for a certificate")
    p_max.add_argument("certificate", help="certificate archive (JSON)")
    p_max.add_argument("--config", required=False)
    p_max.set_defaults(func=cmd_max_delay)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
