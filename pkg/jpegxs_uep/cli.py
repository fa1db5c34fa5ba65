"""
Command line front end.

.. code-block:: console

    jpegxs-uep optimize --plr 0.05 --abel 20 --rc 400k --scheme uep
    jpegxs-uep simulate --plr 0.05 --abel 20 --rc 100k 400k 1M --scheme uep eep unprotected --out fig4.csv
    jpegxs-uep validate --quick
    jpegxs-uep pmf --plr 0.05 --abel 20 --out pmf.csv
    jpegxs-uep runs list

Exit codes: 0 success, 1 usage or bad input, 2 infeasible rate or failed validation.
"""

import argparse
import csv
import json
import logging
import sys
from datetime import datetime, timezone
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from scipy.stats import binom

from .Channel import ChannelKind, ChannelManager, ChannelSpec
from .Codestream import CodestreamManager, CodestreamProfile
from .ExperimentRun import ExperimentRunManager, RunManifest
from .Optimizer import OptimizerManager
from .ReedSolomon import ReedSolomonManager, RsCode
from .Simulator import ExperimentConfig, Scheme, SimulatorManager, plan_frame
from .utils import (
    ConvergenceError,
    LayoutError,
    ParameterError,
    ProfileError,
    RateRangeError,
    configure_logging,
    get_setting,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2

_SUFFIXES = {"k": 1_000, "m": 1_000_000}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_rate(text: str) -> float:
    """Bytes per frame, with an optional ``k`` (1e3) or ``M`` (1e6) suffix."""
    value = text.strip()
    scale = _SUFFIXES.get(value[-1:].lower(), 1)
    if scale != 1:
        value = value[:-1]
    try:
        rate = float(value) * scale
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid rate '{text}'")
    if rate <= 0:
        raise argparse.ArgumentTypeError(f"rate must be positive, got '{text}'")
    return rate


def _channel_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--plr", type=float, default=0.05, help="Packet loss rate (default: 0.05)")
    parser.add_argument("--abel", type=float, default=20.0, help="Average burst error length in packets (default: 20)")
    parser.add_argument("--channel", choices=[kind.value for kind in ChannelKind], default="gilbert")
    parser.add_argument("--n", type=int, default=None, help="Packets per interleaving block (default: 255)")


def _profile_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--profile", default=None,
        help="Profile file or name in JPEGXS_UEP_PROFILE_DIR (default: the bundled 'default')",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jpegxs-uep", description="Unequal error protection of JPEG-XS codestreams over lossy channels.")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    optimize = commands.add_parser("optimize", help="Solve protection plans for target channel rates")
    _profile_args(optimize)
    _channel_args(optimize)
    optimize.add_argument("--rc", type=parse_rate, nargs="+", required=True, help="Channel bytes per frame (k/M suffixes)")
    optimize.add_argument("--scheme", choices=[s.value for s in Scheme], default="uep")
    optimize.add_argument("--hf-all-or-nothing", action="store_true")
    optimize.add_argument("--out", help="Write the plans as JSON")

    simulate = commands.add_parser("simulate", help="Monte Carlo experiment, CSV report")
    _profile_args(simulate)
    _channel_args(simulate)
    simulate.add_argument("--rc", type=parse_rate, nargs="+", required=True)
    simulate.add_argument("--scheme", choices=[s.value for s in Scheme], nargs="+", default=[s.value for s in Scheme])
    simulate.add_argument("--trials", type=int, default=None)
    simulate.add_argument("--seed", type=int, default=None, help="Base seed; trial t uses seed + t")
    simulate.add_argument("--chain-scope", choices=["frame", "block"], default=None)
    simulate.add_argument("--byte-path", action="store_true", help="Encode and decode real bytes instead of loss counts")
    simulate.add_argument("--hf-all-or-nothing", action="store_true")
    simulate.add_argument("--workers", type=int, default=None)
    simulate.add_argument("--out", help="CSV file (default: standard output); a .manifest.json sidecar is written next to it")
    simulate.add_argument("--json", dest="json_out", help="Also write the full report as JSON")
    simulate.add_argument("--no-store", action="store_true", help="Do not record the run in the database")

    validate = commands.add_parser("validate", help="Run the oracle suite and print a scorecard")
    _profile_args(validate)
    validate.add_argument("--quick", action="store_true", help="Reduced case and trial counts")
    validate.add_argument("--seed", type=int, default=None)

    pmf = commands.add_parser("pmf", help="Dump the block loss count distribution as CSV")
    _channel_args(pmf)
    pmf.add_argument("--out", help="CSV file (default: standard output)")

    runs = commands.add_parser("runs", help="List or show stored runs")
    runs_commands = runs.add_subparsers(dest="runs_command", required=True)
    runs_list = runs_commands.add_parser("list")
    runs_list.add_argument("--page", type=int, default=1)
    runs_list.add_argument("--page-size", type=int, default=10)
    runs_show = runs_commands.add_parser("show")
    runs_show.add_argument("run_id")
    return parser


def _channel_spec(args) -> ChannelSpec:
    return ChannelSpec(kind=args.channel, packet_loss_rate=args.plr, avg_burst_len=args.abel)


def _load_profile(args) -> CodestreamProfile:
    return CodestreamManager.load_profile(args.profile or get_setting("default_profile"))


def _block_n(args) -> int:
    return args.n or get_setting("block_packets")


def cmd_optimize(args) -> int:
    profile = _load_profile(args)
    started = datetime.now(timezone.utc)
    n = _block_n(args)
    spec = _channel_spec(args)
    pmf = ChannelManager.block_loss_pmf(ChannelManager.fit_gilbert(spec), n)
    plans = []
    for target in args.rc:
        model = OptimizerManager.distortion_model(
            profile, pmf, target, packet_len=get_setting("packet_len"), hf_all_or_nothing=args.hf_all_or_nothing
        )
        if args.scheme == Scheme.uep.value:
            plan = OptimizerManager.solve_uep(target, profile, model, tol=get_setting("rate_tol"))
        elif args.scheme == Scheme.eep.value:
            plan = OptimizerManager.solve_eep(target, profile, model)
        else:
            plan = OptimizerManager.unprotected_plan(target, profile, model)
        plans.append(plan)

    print(f"{'scheme':<12}{'r_c':>10}{'r_s':>12}{'K1':>5}{'K2':>5}{'K3':>5}{'B':>3}{'E[MSE]':>11}{'sent':>10}")
    for target, plan in zip(args.rc, plans):
        sent = plan.realized_r_c if plan.realized_r_c is not None else "-"
        print(
            f"{plan.scheme:<12}{target:>10.0f}{plan.r_s:>12.1f}"
            f"{plan.k[0]:>5}{plan.k[1]:>5}{plan.k[2]:>5}{plan.blocks:>3}"
            f"{plan.expected_distortion:>11.4f}{sent:>10}"
        )
    if args.out:
        manifest = RunManifest.for_command("optimize", {
            "profile": profile.name,
            "channel": spec.model_dump(mode="json"),
            "target_r_c": list(args.rc),
            "scheme": args.scheme,
            "n": n,
            "packet_len": get_setting("packet_len"),
            "hf_all_or_nothing": args.hf_all_or_nothing,
            "rate_tol": get_setting("rate_tol"),
        }, profile_checksum=profile.checksum(), started=started)
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(
                {"run_id": manifest.run_id, "plans": [plan.model_dump(mode="json") for plan in plans]},
                f, indent=2, sort_keys=True,
            )
        manifest.outputs = [args.out]
        manifest.finished = datetime.now(timezone.utc)
        ExperimentRunManager.write_manifest(manifest, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    profile = _load_profile(args)
    started = datetime.now(timezone.utc)
    overrides = {
        "trials": args.trials,
        "base_seed": args.seed,
        "chain_scope": args.chain_scope,
        "workers": args.workers,
        "n": args.n,
    }
    reports = []
    for scheme in args.scheme:
        config = ExperimentConfig(
            profile=args.profile or get_setting("default_profile"),
            channel=_channel_spec(args),
            target_r_c=args.rc,
            scheme=scheme,
            fast_path=not args.byte_path,
            hf_all_or_nothing=args.hf_all_or_nothing,
            **{key: value for key, value in overrides.items() if value is not None},
        )
        reports.append(SimulatorManager.run_experiment(config, profile))

    text = SimulatorManager.report_to_csv(reports, args.out)
    if not args.out:
        sys.stdout.write(text)
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as f:
            f.write(SimulatorManager.report_to_json(reports))

    manifest = RunManifest.for_reports(reports, started=started)
    manifest.outputs = [path for path in (args.out, args.json_out) if path]
    manifest.finished = datetime.now(timezone.utc)
    if args.out:
        ExperimentRunManager.write_manifest(manifest, args.out)
    if not args.no_store:
        ExperimentRunManager.store_report(reports, manifest)
    return EXIT_OK


def cmd_pmf(args) -> int:
    started = datetime.now(timezone.utc)
    spec = _channel_spec(args)
    n = _block_n(args)
    pmf = ChannelManager.block_loss_pmf(ChannelManager.fit_gilbert(spec), n)
    survival = pmf.survival
    manifest = RunManifest.for_command("pmf", {"channel": spec.model_dump(mode="json"), "n": n}, started=started)
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        out.write(f"# run_id={manifest.run_id}\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["j", "p", "tail"])
        for j in range(pmf.n + 1):
            writer.writerow([j, format(pmf.pmf[j], ".12g"), format(survival[j], ".12g")])
    finally:
        if args.out:
            out.close()
    if args.out:
        manifest.outputs = [args.out]
        manifest.finished = datetime.now(timezone.utc)
        ExperimentRunManager.write_manifest(manifest, args.out)
    return EXIT_OK


def cmd_runs(args) -> int:
    if args.runs_command == "list":
        for run in ExperimentRunManager.list_runs(page=args.page, page_size=args.page_size):
            manifest = run.get_manifest()
            schemes = ",".join(config["scheme"] for config in manifest.configs)
            print(f"{run.id}  {run.created:%Y-%m-%d %H:%M:%S}  {schemes}  profile={run.profile_checksum[:12]}")
        return EXIT_OK
    run = ExperimentRunManager.read_run(args.run_id)
    if run is None:
        print(f"No stored run '{args.run_id}'", file=sys.stderr)
        return EXIT_FAILED
    print(run.manifest)
    print(SimulatorManager.report_to_csv(run.get_reports()), end="")
    return EXIT_OK


Check = Tuple[str, bool, str]


def _check_rs(rng: np.random.Generator, cases: int) -> Check:
    failures = 0
    for _ in range(cases):
        n = int(rng.integers(2, 256))
        k = int(rng.integers(1, n))
        code = RsCode(n, k)
        info = rng.integers(0, 256, size=k, dtype=np.uint8).tobytes()
        codeword = ReedSolomonManager.rs_encode(code, info)
        for lost in (int(rng.integers(0, n - k + 1)), n - k + 1):
            erasures = np.zeros(n, dtype=bool)
            erasures[rng.choice(n, size=lost, replace=False)] = True
            result = ReedSolomonManager.rs_decode_erasures(code, codeword, erasures)
            should_recover = lost <= n - k
            if result.recovered != should_recover or (should_recover and result.data != info):
                failures += 1
    return "rs_erasure_roundtrip", failures == 0, f"{failures} failures in {2 * cases} decodes"


def _check_pmf(rng: np.random.Generator, blocks: int, threshold: float) -> Check:
    worst = 0.0
    for plr in (0.01, 0.05, 0.10):
        for abel in (10, 20, 30):
            params = ChannelManager.fit_gilbert(ChannelSpec(packet_loss_rate=plr, avg_burst_len=abel))
            exact = ChannelManager.block_loss_pmf(params, 255)
            sampled = ChannelManager.sample_block_histogram(params, 255, blocks, rng)
            worst = max(worst, ChannelManager.total_variation(exact, sampled))
    params = ChannelManager.fit_gilbert(ChannelSpec(kind="bernoulli", packet_loss_rate=0.05))
    binomial_error = float(np.abs(ChannelManager.block_loss_pmf(params, 255).pmf - binom.pmf(np.arange(256), 255, 0.05)).max())
    ok = worst < threshold and binomial_error < 1e-10
    return "loss_pmf", ok, f"max TV {worst:.4f} (< {threshold}), Bernoulli vs binomial {binomial_error:.2e}"


def _check_paths(profile: CodestreamProfile, trials: int, seed: int) -> Check:
    config = ExperimentConfig(
        profile=profile.name,
        channel=ChannelSpec(packet_loss_rate=0.05, avg_burst_len=20),
        target_r_c=[150000],
        fast_path=False,
    )
    params = ChannelManager.fit_gilbert(config.channel)
    model = OptimizerManager.distortion_model(profile, ChannelManager.block_loss_pmf(params, config.n), 150000)
    plan = OptimizerManager.solve_uep(150000, profile, model)
    frame = plan_frame(plan, profile, config)
    mismatches = 0
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        masks = np.stack([ChannelManager.sample_losses(params, frame.block.n, rng) for _ in range(frame.blocks)])
        payloads = [rng.integers(0, 256, size=size, dtype=np.uint8).tobytes() for size in frame.class_bytes]
        fast = SimulatorManager.run_trial(plan, profile, masks, config, frame)
        full = SimulatorManager.run_trial_bytes(plan, profile, masks, config, payloads, frame)
        mismatches += fast != full
    return "fast_vs_byte_path", mismatches == 0, f"{mismatches} mismatches in {trials} frames"


def _check_optimizer(profile: CodestreamProfile) -> Check:
    params = ChannelManager.fit_gilbert(ChannelSpec(packet_loss_rate=0.05, avg_burst_len=20))
    pmf = ChannelManager.block_loss_pmf(params, 255)
    details = []
    ok = True
    for target in (200000.0, 400000.0, 800000.0):
        model = OptimizerManager.distortion_model(profile, pmf, target)
        uep = OptimizerManager.solve_uep(target, profile, model)
        eep = OptimizerManager.solve_eep(target, profile, model)
        coarse = OptimizerManager.coarse_grid_search(target, profile, model)
        if coarse is not None and uep.expected_distortion > 1.01 * coarse.expected_distortion:
            ok = False
        if uep.expected_distortion > eep.expected_distortion + 1e-9:
            ok = False
        details.append(f"{target:.0f}: uep {uep.expected_distortion:.2f} eep {eep.expected_distortion:.2f}")
    return "optimizer_vs_brute_force", ok, "; ".join(details)


def _check_monte_carlo(profile: CodestreamProfile, trials: int, seed: int) -> Check:
    details = []
    ok = True
    for scheme in (Scheme.uep, Scheme.eep):
        config = ExperimentConfig(
            profile=profile.name,
            channel=ChannelSpec(packet_loss_rate=0.05, avg_burst_len=20),
            target_r_c=[400000],
            scheme=scheme,
            trials=trials,
            base_seed=seed,
            chain_scope="block",
            workers=1,
        )
        point = SimulatorManager.run_experiment(config, profile).points[0]
        gap = abs(point.mean_mse - point.expected_mse)
        ok &= gap <= 3 * point.stderr_mse
        details.append(f"{scheme.value}: |{point.mean_mse:.2f} - {point.expected_mse:.2f}| vs 3se {3 * point.stderr_mse:.2f}")
    return "monte_carlo_vs_analytic", ok, "; ".join(details)


def cmd_validate(args) -> int:
    seed = args.seed if args.seed is not None else get_setting("base_seed")
    rng = np.random.default_rng(seed)
    try:
        profile = _load_profile(args)
    except ProfileError as e:
        print(f"FAIL  profile: {e}")
        return EXIT_FAILED
    checks: List[Tuple[str, Callable[[], Check]]] = [
        ("rs_erasure_roundtrip", lambda: _check_rs(rng, 200 if args.quick else 1000)),
        ("loss_pmf", lambda: _check_pmf(rng, 100_000 if args.quick else 1_000_000, 0.03 if args.quick else 0.01)),
        ("fast_vs_byte_path", lambda: _check_paths(profile, 20 if args.quick else 100, seed)),
        ("optimizer_vs_brute_force", lambda: _check_optimizer(profile)),
        ("monte_carlo_vs_analytic", lambda: _check_monte_carlo(profile, 1000 if args.quick else 10_000, seed)),
    ]
    passed = 0
    for label, check in checks:
        try:
            name, ok, detail = check()
        except (ValueError, RuntimeError) as e:
            name, ok, detail = label, False, f"{type(e).__name__}: {e}"
        passed += ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    print(f"{passed}/{len(checks)} checks passed")
    return EXIT_OK if passed == len(checks) else EXIT_FAILED


COMMANDS = {
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "pmf": cmd_pmf,
    "runs": cmd_runs,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging("DEBUG" if args.verbose else None)
    try:
        return COMMANDS[args.command](args)
    except (RateRangeError, ConvergenceError, LayoutError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
    except (ParameterError, ProfileError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
