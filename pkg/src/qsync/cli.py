"""Command-line interface.

Subcommands: simulate | sync | batch-sync | calibrate | sweep | threshold |
gate.  Exit codes are fixed for scripting: 0 success, 2 configuration
error, 3 I/O or file-format error, 4 confidence below threshold, 5 coarse
estimation or drift fit failed, 6 experiment grid incomplete.

Parameter precedence: command-line flag > config file > built-in default.
The master seed falls back to the QSYNC_SEED environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ProtocolConfig, load_config
from .errors import (
    CoarseEstimationFailed,
    ConfigurationError,
    DriftFitUnavailable,
    SessionFormatError,
)
from .experiments import (
    DEFAULT_TRIALS,
    PAPER_TRIALS,
    fit_threshold_slope,
    result_dict,
    run_calibration,
    sweep_string_length,
    threshold_95,
    write_calibration_csv,
    write_sweep_csv,
    write_threshold_csv,
)
from .manifest import RunManifest
from .session import DEFAULT_M_WINDOW, generate_alice, make_ground_truth, simulate_bob
from .sessionio import export_csv, read_session, write_session
from .sync import batch_synchronize, estimate_phase, gated_click_rates, gate_occupied_slots, synchronize
from .detection import estimate_mu

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_LOW_CONFIDENCE = 4
EXIT_COARSE_FAILED = 5
EXIT_GRID_INCOMPLETE = 6

_CONFIG_FLAGS = {
    "tau_a": float,
    "m": int,
    "n_sampling": int,
    "mu_a": float,
    "eta": float,
    "dark_prob_comm_bin": float,
    "drift_ppm": float,
    "t0_bins": int,
    "alpha": float,
}


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value config file")
    group = parser.add_argument_group("config overrides")
    for name, typ in _CONFIG_FLAGS.items():
        group.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)
    group.add_argument(
        "--state-probabilities",
        metavar="P_H,P_L,P_R,P_VAC",
        default=None,
        help="comma-separated symbol probabilities",
    )


def _build_config(args: argparse.Namespace) -> ProtocolConfig:
    config = load_config(args.config) if args.config else ProtocolConfig()
    overrides = {}
    for name in _CONFIG_FLAGS:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.state_probabilities is not None:
        try:
            overrides["state_probabilities"] = tuple(
                float(p) for p in args.state_probabilities.split(",")
            )
        except ValueError as exc:
            raise ConfigurationError(f"bad --state-probabilities: {exc}") from None
    return config.replace(**overrides) if overrides else config


def _resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("QSYNC_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"QSYNC_SEED must be an integer, got {env!r}") from None
    return 0


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad {flag}: {exc}") from None
    if not values:
        raise ConfigurationError(f"{flag} must list at least one value")
    return values


def _parse_ints(text: str, flag: str) -> list[int]:
    return [int(v) for v in _parse_floats(text, flag)]


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _build_config(args)
    seed = _resolve_seed(args)
    if args.comm_bins < 1:
        raise ConfigurationError("--comm-bins must be >= 1")
    ss = np.random.SeedSequence([seed, 0x53494D])
    s_alice, s_bob = ss.spawn(2)
    alice = generate_alice(config, args.comm_bins, s_alice)
    truth = make_ground_truth(config, args.comm_bins, config.t0_bins)
    record_len = truth.transmission_end + args.post_bins
    bob = simulate_bob(alice, config, truth, record_len, s_bob)

    out = Path(args.out)
    write_session(out, config, truth, alice, bob)
    manifest = RunManifest("simulate", config, seed)
    manifest.add_output(out)
    if args.csv:
        export_csv(args.csv, truth, alice, bob)
        manifest.add_output(args.csv)
    manifest.note("comm_bins", args.comm_bins)
    manifest.note("record_len", record_len)
    manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {out} ({record_len} sampling bins)")
    return EXIT_OK


def cmd_sync(args: argparse.Namespace) -> int:
    config, truth, alice, bob = read_session(args.session)
    n = config.n_sampling
    comparison = args.n if args.n is not None else len(alice) - len(alice) % n
    result = synchronize(
        alice,
        bob,
        config,
        comparison,
        m_window=args.m_window,
        mu_override=args.mu_override,
    )
    print(result.to_json(emit_posterior=args.emit_posterior))
    if args.out:
        Path(args.out).write_text(
            result.to_json(emit_posterior=args.emit_posterior) + "\n", encoding="utf-8"
        )
    return EXIT_OK if result.confidence >= args.min_confidence else EXIT_LOW_CONFIDENCE


def cmd_batch_sync(args: argparse.Namespace) -> int:
    config, truth, alice, bob = read_session(args.session)
    results, fit = batch_synchronize(
        alice,
        bob,
        config,
        batch_len=args.batch_len,
        comparison_len=args.n,
        m_window=args.m_window,
    )
    payload = {
        "batches": [
            None
            if res is None
            else {
                "batch": b,
                "window_start": res.window_start,
                "best_index": res.best_index,
                "absolute_offset": res.absolute_offset,
                "offset_bins": res.absolute_offset - b * args.batch_len,
                "confidence": res.confidence,
                "mu_estimate": res.mu_estimate,
            }
            for b, res in enumerate(results)
        ],
        "drift_fit": {
            "slope_bins_per_batch": fit.slope,
            "intercept_bins": fit.intercept,
            "slope_stderr": fit.slope_stderr,
            "intercept_stderr": fit.intercept_stderr,
            "drift_ppm_estimate": fit.drift_ppm_estimate,
            "residuals": list(fit.residuals),
            "usable_batches": fit.usable_batches,
        },
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gate(args: argparse.Namespace) -> int:
    config, truth, alice, bob = read_session(args.session)
    n = config.n_sampling
    start = truth.transmission_start
    end = truth.transmission_end + 1
    phase = estimate_phase(bob.clicks[start:end], n, start=start)
    gated = gate_occupied_slots(bob, phase, start, end)
    rates = gated_click_rates(bob, phase, start, end)
    mu_est = estimate_mu(
        np.minimum(rates, 1 - 1e-12),
        config.dark_prob_comm_bin,
        n_sampling=n,
        state_probabilities=config.state_probabilities,
    )
    if args.out:
        with Path(args.out).open("w", encoding="utf-8", newline="") as handle:
            handle.write("comm_bin,det_H,det_V,det_L,det_R\n")
            for k, row in enumerate(gated.astype(int)):
                handle.write(f"{k},{row[0]},{row[1]},{row[2]},{row[3]}\n")
    print(
        json.dumps(
            {
                "phase": phase,
                "comm_bins": int(len(gated)),
                "click_rates": [float(r) for r in rates],
                "mu_estimate": float(mu_est),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return EXIT_OK


def _experiment_shell(args, name, points, evaluate, write_csv, csv_name, extra_note=None):
    """Shared grid-runner: per-point failures are recorded, not fatal."""
    config = _build_config(args)
    seed = _resolve_seed(args)
    trials = PAPER_TRIALS if args.paper_scale else args.trials
    if trials < 1:
        raise ConfigurationError("--trials must be >= 1")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = []
    failures = []
    for point in points:
        try:
            results.extend(evaluate(config, seed, trials, point))
        except (ConfigurationError, ValueError, ArithmeticError) as exc:
            failures.append({"point": repr(point), "error": str(exc)})

    csv_path = out_dir / csv_name
    write_csv(csv_path, results)
    manifest = RunManifest(name, config, seed)
    manifest.add_output(csv_path)
    manifest.note("trials", trials)
    manifest.note("grid_points", len(points))
    manifest.note("failed_points", failures)
    manifest.note("results", [result_dict(r) for r in results])
    if extra_note is not None:
        extra_note(manifest, results)
    manifest.write(out_dir / f"{name}_manifest.json")

    completed = len(points) - len(failures)
    for failure in failures:
        print(f"grid point failed: {failure['point']}: {failure['error']}", file=sys.stderr)
    print(f"{name}: {completed}/{len(points)} grid points -> {csv_path}")
    return EXIT_OK if completed >= 0.9 * len(points) else EXIT_GRID_INCOMPLETE


def cmd_calibrate(args: argparse.Namespace) -> int:
    n_list = _parse_ints(args.n_list, "--n-list")

    def evaluate(config, seed, trials, n):
        return run_calibration(
            config, args.mu, [n], trials, seed, m_window=args.m_window, jobs=args.jobs
        )

    return _experiment_shell(
        args, "calibrate", n_list, evaluate, write_calibration_csv, "fig2_calibration.csv"
    )


def cmd_sweep(args: argparse.Namespace) -> int:
    mu_list = _parse_floats(args.mu_list, "--mu-list")
    n_list = _parse_ints(args.n_list, "--n-list")
    points = [(mu, n) for mu in mu_list for n in n_list]

    def evaluate(config, seed, trials, point):
        mu, n = point
        return sweep_string_length(
            config, [mu], [n], args.dark, trials, seed, m_window=args.m_window, jobs=args.jobs
        )

    return _experiment_shell(args, "sweep", points, evaluate, write_sweep_csv, "fig3_sweep.csv")


def cmd_threshold(args: argparse.Namespace) -> int:
    mu_list = _parse_floats(args.mu_list, "--mu-list")
    d_list = _parse_floats(args.d_list, "--d-list")
    points = [(mu, d) for mu in mu_list for d in d_list]

    def evaluate(config, seed, trials, point):
        mu, d = point
        return threshold_95(
            config,
            [mu],
            [d],
            trials,
            seed,
            target=args.target,
            n_min=args.n_min,
            n_max=args.n_max,
            points_per_decade=args.points_per_decade,
            m_window=args.m_window,
            jobs=args.jobs,
        )

    def note_slope(manifest, results):
        try:
            slope, intercept = fit_threshold_slope(results, 0.1, 1.0)
        except ValueError:
            return
        manifest.note("loglog_slope_mu_0.1_to_1", slope)
        manifest.note("loglog_intercept", intercept)

    return _experiment_shell(
        args, "threshold", points, evaluate, write_threshold_csv,
        "fig4_threshold.csv", extra_note=note_slope,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsync",
        description=(
            "Decoy-state BB84 session simulator and Bayesian clock-offset recovery."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--seed", type=int, default=None, help="master seed (env QSYNC_SEED)")
        if config:
            _add_config_args(p)

    p = sub.add_parser("simulate", help="generate a session file")
    common(p)
    p.add_argument("--comm-bins", type=int, required=True, help="transmitted communication bins")
    p.add_argument("--post-bins", type=int, default=4096, help="dark bins after the transmission")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--csv", metavar="FILE", help="also export a per-bin CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sync", help="recover the clock offset from a session file")
    common(p, config=False)
    p.add_argument("session", metavar="SESSION")
    p.add_argument("--n", type=int, default=None, help="comparison length in sampling bins")
    p.add_argument("--m-window", type=int, default=DEFAULT_M_WINDOW)
    p.add_argument("--min-confidence", type=float, default=0.95)
    p.add_argument("--mu-override", type=float, default=None)
    p.add_argument("--emit-posterior", action="store_true")
    p.add_argument("--out", metavar="FILE", help="also write the JSON result here")
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("batch-sync", help="batched synchronization with a drift fit")
    common(p, config=False)
    p.add_argument("session", metavar="SESSION")
    p.add_argument("--batch-len", type=int, required=True, help="batch length in sampling bins")
    p.add_argument("--n", type=int, required=True, help="comparison length per batch")
    p.add_argument("--m-window", type=int, default=DEFAULT_M_WINDOW)
    p.set_defaults(func=cmd_batch_sync)

    p = sub.add_parser("gate", help="time-gate a session to its occupied slots")
    common(p, config=False)
    p.add_argument("session", metavar="SESSION")
    p.add_argument("--out", metavar="FILE", help="write the gated record as CSV")
    p.set_defaults(func=cmd_gate)

    def experiment_common(p):
        common(p)
        p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
        p.add_argument("--paper-scale", action="store_true", help=f"use {PAPER_TRIALS} trials")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--m-window", type=int, default=DEFAULT_M_WINDOW)
        p.add_argument("--out-dir", default="results", metavar="DIR")

    p = sub.add_parser("calibrate", help="confidence vs success frequency across N")
    experiment_common(p)
    p.add_argument("--mu", type=float, required=True, help="received mean photon number")
    p.add_argument("--n-list", required=True, metavar="N1,N2,...")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="mean confidence over a (mu, N) grid")
    experiment_common(p)
    p.add_argument("--mu-list", required=True, metavar="MU1,MU2,...")
    p.add_argument("--n-list", required=True, metavar="N1,N2,...")
    p.add_argument("--dark", type=float, default=8e-4, help="dark probability per comm bin")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("threshold", help="string length reaching a target confidence")
    experiment_common(p)
    p.add_argument("--mu-list", required=True, metavar="MU1,MU2,...")
    p.add_argument("--d-list", default="8e-4", metavar="D1,D2,...")
    p.add_argument("--target", type=float, default=0.95)
    p.add_argument("--n-min", type=int, default=104)
    p.add_argument("--n-max", type=int, default=120_000)
    p.add_argument("--points-per-decade", type=int, default=10)
    p.set_defaults(func=cmd_threshold)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SessionFormatError as exc:
        print(f"session file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CoarseEstimationFailed, DriftFitUnavailable) as exc:
        print(f"synchronization failed: {exc}", file=sys.stderr)
        return EXIT_COARSE_FAILED
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
