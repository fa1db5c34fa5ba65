"""
This module runs Monte Carlo transmission experiments: for every target channel
rate it obtains a protection plan, draws seeded loss patterns from the channel,
decodes each frame with the per-class policy and aggregates the realized MSE.

Decode policy of one frame spread over ``B`` interleaving blocks:

* class 1 unrecoverable in any block: the frame is dropped, ``mse = Delta_ALL``;
* class 2 unrecoverable: its surviving bytes are decoded and cost
  ``100 * (lost packets / n) * delta``, averaged over blocks by class 2 payload;
* class 3 unrecoverable: the high frequencies of the block are discarded and
  cost ``Delta_HF`` times the fraction of blocks that lost them (or all of
  ``Delta_HF`` with ``hf_all_or_nothing``).

Reed-Solomon codes are MDS, so the number of lost packets per block decides
every class; the fast path only draws loss counts, while the byte path encodes
random payloads, erases the lost packets, decodes and checks the recovered bytes.

.. list-table:: Classes
   :header-rows: 1

   * - Class Name
     - Description
   * - Scheme
     - ``uep``, ``eep`` or ``unprotected``.
   * - ExperimentConfig
     - Profile, channel, rates, scheme, trials and seeds of one experiment.
   * - TrialOutcome
     - Realized MSE and per-block class states of one frame.
   * - RatePointReport
     - Aggregates over all trials at one channel rate.
   * - SimulationReport
     - Config echo and one report per rate point.
   * - SimulatorManager
     - Static methods to run trials and experiments and to export reports.

.. code-block:: py

    from jpegxs_uep import UepActor
    from jpegxs_uep.Channel import ChannelSpec
    from jpegxs_uep.Simulator import ExperimentConfig

    config = ExperimentConfig(
        channel=ChannelSpec(packet_loss_rate=0.05, avg_burst_len=20),
        target_r_c=[400000],
        scheme="uep",
    )
    report = UepActor.run_experiment(config)
    print(report.points[0].mean_mse, report.points[0].decoded_ratio)
"""

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from multiprocessing import Pool
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ConfigDict
from sqlmodel import SQLModel, Field

from .Channel import ChannelManager, ChannelSpec, GilbertParams
from .Codestream import CodestreamManager, CodestreamProfile
from .Optimizer import ChannelDistortionModel, OptimizerManager, ProtectionPlan
from .Packetizer import ClassRecovery, ClassState, FrameLayout, PacketizerManager, integer_class_sizes
from .utils import IntegrityError, ParameterError, get_setting

logger = logging.getLogger(__name__)

PEAK = 255.0

CSV_COLUMNS = [
    "scheme", "plr", "abel", "r_c", "r_s", "K1", "K2", "K3",
    "mean_mse", "stderr_mse", "mean_psnr_decoded", "decoded_ratio",
]


class Scheme(str, Enum):
    uep = "uep"
    eep = "eep"
    unprotected = "unprotected"


class ChainScope(str, Enum):
    frame = "frame"
    block = "block"


class ExperimentConfig(SQLModel):
    # defaults from get_setting pass the same checks as explicit values
    model_config = ConfigDict(validate_default=True)

    profile: str = Field(default_factory=lambda: get_setting("default_profile"))
    channel: ChannelSpec
    target_r_c: List[float] = Field(min_length=1)
    scheme: Scheme = Field(default=Scheme.uep)
    trials: int = Field(default_factory=lambda: get_setting("trials"), ge=1)
    base_seed: int = Field(default_factory=lambda: get_setting("base_seed"))
    fast_path: bool = Field(default=True)
    hf_all_or_nothing: bool = Field(default_factory=lambda: get_setting("hf_all_or_nothing"))
    chain_scope: ChainScope = Field(default_factory=lambda: get_setting("chain_scope"))
    n: int = Field(default_factory=lambda: get_setting("block_packets"), ge=1, le=255)
    packet_len: int = Field(default_factory=lambda: get_setting("packet_len"), ge=1)
    rate_tol: float = Field(default_factory=lambda: get_setting("rate_tol"), gt=0.0)
    psnr_ceiling: float = Field(default_factory=lambda: get_setting("psnr_ceiling"))
    workers: int = Field(default_factory=lambda: get_setting("workers"), ge=1)


@dataclass(frozen=True)
class TrialOutcome:
    frame_decoded: bool
    mse: float
    per_class_state: Tuple[ClassRecovery, ...]


class RatePointReport(SQLModel):
    scheme: Scheme
    plr: float
    abel: float
    r_c: float
    plan: ProtectionPlan
    trials: int
    mean_mse: float
    stderr_mse: float
    mean_mse_decoded: Optional[float] = None
    mean_psnr: float
    mean_psnr_decoded: Optional[float] = None
    decoded_ratio: float
    expected_mse: float


class SimulationReport(SQLModel):
    config: ExperimentConfig
    profile_checksum: str
    points: List[RatePointReport] = Field(default_factory=list)

    @property
    def run_id(self) -> str:
        return run_digest([self])


def payload_digest(payload: Any) -> str:
    """Short sha256 of the canonical JSON of ``payload``."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def run_digest(reports: Sequence[SimulationReport]) -> str:
    """Digest of the configs and profiles behind a set of reports; equal digests mean equal outputs."""
    return payload_digest([
        {"config": report.config.model_dump(mode="json"), "profile": report.profile_checksum}
        for report in reports
    ])


def plan_frame(plan: ProtectionPlan, profile: CodestreamProfile, config: ExperimentConfig) -> FrameLayout:
    """Frame layout of a plan: whole-byte class sizes laid out in at least ``plan.blocks`` blocks."""
    total = int(round(plan.r_s))
    sizes = integer_class_sizes(CodestreamManager.class_sizes(profile, plan.r_s), total)
    return PacketizerManager.frame_layout(sizes, plan.k, config.n, config.packet_len, min_blocks=plan.blocks)


def draw_loss_masks(params: GilbertParams, frame: FrameLayout, chain_scope: ChainScope, rng: np.random.Generator) -> np.ndarray:
    """Loss masks of shape ``(blocks, n)``, from one chain over the frame or one stationary restart per block."""
    n, blocks = frame.block.n, frame.blocks
    if chain_scope == ChainScope.frame:
        return ChannelManager.sample_losses(params, n * blocks, rng).reshape(blocks, n)
    return np.stack([ChannelManager.sample_losses(params, n, rng) for _ in range(blocks)])


def _outcome(recoveries: Sequence[ClassRecovery], frame: FrameLayout, plan: ProtectionPlan, profile: CodestreamProfile, config: ExperimentConfig) -> TrialOutcome:
    recoveries = tuple(recoveries)
    if any(r.states[0] == ClassState.unrecoverable for r in recoveries):
        return TrialOutcome(frame_decoded=False, mse=profile.delta_all, per_class_state=recoveries)

    lens = [frame.payload_lens(b) for b in range(frame.blocks)]
    class2_bytes = math.fsum(l[1] for l in lens)
    class2 = 0.0
    if class2_bytes > 0:
        class2 = math.fsum(r.fraction_lost[1] * l[1] for r, l in zip(recoveries, lens)) / class2_bytes

    hf_blocks = [r for r, l in zip(recoveries, lens) if l[2] > 0]
    dropped = sum(1 for r in hf_blocks if r.states[2] == ClassState.unrecoverable)
    if not hf_blocks:
        hf = 0.0
    elif config.hf_all_or_nothing:
        hf = 1.0 if dropped else 0.0
    else:
        hf = dropped / len(hf_blocks)

    mse = (
        CodestreamManager.source_distortion(profile, plan.r_s)
        + 100.0 * profile.delta * class2
        + profile.delta_hf * hf
    )
    return TrialOutcome(frame_decoded=True, mse=mse, per_class_state=recoveries)


def _trial_chunk(args) -> List[Tuple[bool, float]]:
    """Pool worker: re-creates the models from their JSON form and runs a run of trials."""
    plan_json, profile_json, config_json, params_json, seeds = args
    plan = ProtectionPlan.model_validate_json(plan_json)
    profile = CodestreamProfile.model_validate_json(profile_json)
    config = ExperimentConfig.model_validate_json(config_json)
    params = GilbertParams.model_validate_json(params_json)
    frame = plan_frame(plan, profile, config)
    results = []
    for seed in seeds:
        outcome = SimulatorManager.run_seeded_trial(plan, profile, params, frame, config, seed)
        results.append((outcome.frame_decoded, outcome.mse))
    return results


class SimulatorManager:
    @staticmethod
    def psnr(mse: float, ceiling: Optional[float] = None) -> float:
        """``10 log10(255^2 / mse)`` in dB, capped at ``ceiling`` (default: the ``psnr_ceiling`` setting).

        Example:
            .. code-block:: py

                UepActor.psnr(65025.0)  # 0.0
                UepActor.psnr(0.0)      # 99.0
        """
        if mse < 0:
            raise ParameterError(f"MSE must be nonnegative, got {mse}")
        if ceiling is None:
            ceiling = get_setting("psnr_ceiling")
        if mse == 0:
            return float(ceiling)
        return min(10.0 * math.log10(PEAK * PEAK / mse), float(ceiling))

    @staticmethod
    def run_trial(plan: ProtectionPlan, profile: CodestreamProfile, loss_masks: np.ndarray, config: ExperimentConfig, frame: Optional[FrameLayout] = None) -> TrialOutcome:
        """Decodes one frame from its per-block loss counts (fast path).

        Args:
            plan (ProtectionPlan): The protection plan the frame was sent with.
            profile (CodestreamProfile): Codestream model of the plan.
            loss_masks (np.ndarray): Boolean array ``(blocks, n)``, True for lost packets.
            config (ExperimentConfig): Supplies ``hf_all_or_nothing`` and the layout constants.
            frame (FrameLayout, optional): Layout of the plan, computed when omitted.

        Returns:
            TrialOutcome: ``mse = Delta_ALL`` when the frame is dropped.
        """
        frame = frame or plan_frame(plan, profile, config)
        masks = np.asarray(loss_masks, dtype=bool)
        if masks.shape != (frame.blocks, frame.block.n):
            raise ParameterError(f"Loss masks must have shape {(frame.blocks, frame.block.n)}, got {masks.shape}")
        recoveries = [
            ClassRecovery.from_loss_count(int(lost), frame.block, frame.payload_lens(b))
            for b, lost in enumerate(masks.sum(axis=1))
        ]
        return _outcome(recoveries, frame, plan, profile, config)

    @staticmethod
    def run_trial_bytes(plan: ProtectionPlan, profile: CodestreamProfile, loss_masks: np.ndarray, config: ExperimentConfig, payloads: Sequence[bytes], frame: Optional[FrameLayout] = None) -> TrialOutcome:
        """Decodes one frame end to end: encode, erase lost packets, erasure-decode.

        Raises:
            IntegrityError: A class reported as recovered decodes to different bytes.
        """
        frame = frame or plan_frame(plan, profile, config)
        masks = np.asarray(loss_masks, dtype=bool)
        if masks.shape != (frame.blocks, frame.block.n):
            raise ParameterError(f"Loss masks must have shape {(frame.blocks, frame.block.n)}, got {masks.shape}")
        blocks = PacketizerManager.build_blocks(payloads, frame)
        shares = frame.share
        recoveries = []
        for b, (block, mask) in enumerate(zip(blocks, masks)):
            received = block.packets.copy()
            received[mask] = 0
            recovery, decoded = PacketizerManager.recover_block(
                dataclasses.replace(block, packets=received), mask, frame.block
            )
            for i, state in enumerate(recovery.states):
                sent = payloads[i][b * shares[i]:b * shares[i] + block.class_payload_lens[i]]
                if state == ClassState.recovered and decoded[i] != bytes(sent):
                    raise IntegrityError(f"Block {b} class {i + 1} decoded to different bytes")
            recoveries.append(recovery)
        return _outcome(recoveries, frame, plan, profile, config)

    @staticmethod
    def run_seeded_trial(plan: ProtectionPlan, profile: CodestreamProfile, params: GilbertParams, frame: FrameLayout, config: ExperimentConfig, seed: int) -> TrialOutcome:
        """One trial driven by ``seed``: losses first, then (byte path) the random class payloads."""
        rng = np.random.default_rng(seed)
        masks = draw_loss_masks(params, frame, config.chain_scope, rng)
        if config.fast_path:
            return SimulatorManager.run_trial(plan, profile, masks, config, frame)
        payloads = [rng.integers(0, 256, size=size, dtype=np.uint8).tobytes() for size in frame.class_bytes]
        return SimulatorManager.run_trial_bytes(plan, profile, masks, config, payloads, frame)

    @staticmethod
    def make_plan(config: ExperimentConfig, target_r_c: float, profile: CodestreamProfile, model: ChannelDistortionModel) -> ProtectionPlan:
        if config.scheme == Scheme.uep:
            return OptimizerManager.solve_uep(target_r_c, profile, model, tol=config.rate_tol)
        if config.scheme == Scheme.eep:
            return OptimizerManager.solve_eep(target_r_c, profile, model)
        return OptimizerManager.unprotected_plan(target_r_c, profile, model)

    @staticmethod
    def run_experiment(config: ExperimentConfig, profile: Optional[CodestreamProfile] = None) -> SimulationReport:
        """Runs ``config.trials`` seeded frames at every target rate.

        Trial ``t`` uses seed ``base_seed + t`` whatever the scheme, so schemes are
        compared on the same loss patterns. Outcomes are reduced in trial order
        with compensated sums, so the report does not depend on ``workers``.

        Args:
            config (ExperimentConfig): The experiment.
            profile (CodestreamProfile, optional): Overrides ``config.profile``.

        Returns:
            SimulationReport: One ``RatePointReport`` per target rate, in order.

        Raises:
            RateRangeError: A target rate below the profile's lowest rate.
            ConvergenceError: The UEP solver did not converge.
        """
        profile = profile or CodestreamManager.load_profile(config.profile)
        params = ChannelManager.fit_gilbert(config.channel)
        pmf = ChannelManager.block_loss_pmf(params, config.n)
        report = SimulationReport(config=config, profile_checksum=profile.checksum())
        seeds = [config.base_seed + t for t in range(config.trials)]

        for target in config.target_r_c:
            model = OptimizerManager.distortion_model(
                profile, pmf, target, packet_len=config.packet_len, hf_all_or_nothing=config.hf_all_or_nothing
            )
            plan = SimulatorManager.make_plan(config, target, profile, model)
            frame = plan_frame(plan, profile, config)
            if config.workers > 1:
                results = _run_pool(plan, profile, config, params, seeds)
            else:
                results = []
                for seed in seeds:
                    outcome = SimulatorManager.run_seeded_trial(plan, profile, params, frame, config, seed)
                    results.append((outcome.frame_decoded, outcome.mse))
            expected, _ = OptimizerManager.expected_frame_distortion(
                plan, profile, dataclasses.replace(model, blocks=frame.blocks)
            )
            point = _aggregate(results, config, target, plan, expected)
            logger.info(
                "%s r_c=%.0f: mean MSE %.4f (+- %.4f), decoded %.3f over %d trials",
                config.scheme.value, target, point.mean_mse, point.stderr_mse, point.decoded_ratio, config.trials,
            )
            report.points.append(point)
        return report

    @staticmethod
    def report_to_csv(reports: Union[SimulationReport, Sequence[SimulationReport]], path: Optional[Union[str, Path]] = None) -> str:
        """One CSV row per rate point, preceded by a ``# run_id=`` comment line.

        The text holds no timestamps, so identical configs give identical files.
        """
        if isinstance(reports, SimulationReport):
            reports = [reports]
        buffer = io.StringIO()
        buffer.write(f"# run_id={run_digest(reports)}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            for point in report.points:
                writer.writerow([
                    point.scheme.value,
                    _fmt(point.plr),
                    _fmt(point.abel),
                    _fmt(point.r_c),
                    _fmt(point.plan.r_s),
                    *point.plan.k,
                    _fmt(point.mean_mse),
                    _fmt(point.stderr_mse),
                    "" if point.mean_psnr_decoded is None else _fmt(point.mean_psnr_decoded),
                    _fmt(point.decoded_ratio),
                ])
        text = buffer.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @staticmethod
    def report_to_json(reports: Union[SimulationReport, Sequence[SimulationReport]]) -> str:
        """Full config echo and every rate point, as indented JSON."""
        if isinstance(reports, SimulationReport):
            reports = [reports]
        payload = {
            "run_id": run_digest(reports),
            "reports": [report.model_dump(mode="json") for report in reports],
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _fmt(value: float) -> str:
    return format(float(value), ".10g")


def _run_pool(plan: ProtectionPlan, profile: CodestreamProfile, config: ExperimentConfig, params: GilbertParams, seeds: List[int]) -> List[Tuple[bool, float]]:
    size = math.ceil(len(seeds) / config.workers)
    chunks = [
        (plan.model_dump_json(), profile.model_dump_json(), config.model_dump_json(), params.model_dump_json(), seeds[i:i + size])
        for i in range(0, len(seeds), size)
    ]
    with Pool(processes=config.workers) as pool:
        parts = pool.map(_trial_chunk, chunks)
    return [result for part in parts for result in part]


def _aggregate(results: List[Tuple[bool, float]], config: ExperimentConfig, target: float, plan: ProtectionPlan, expected: float) -> RatePointReport:
    mses = [mse for _, mse in results]
    decoded = [mse for ok, mse in results if ok]
    trials = len(mses)
    mean = math.fsum(mses) / trials
    stderr = 0.0
    if trials > 1:
        variance = math.fsum((mse - mean) ** 2 for mse in mses) / (trials - 1)
        stderr = math.sqrt(variance / trials)
    mean_decoded = math.fsum(decoded) / len(decoded) if decoded else None
    psnr_all = math.fsum(SimulatorManager.psnr(mse, config.psnr_ceiling) for mse in mses) / trials
    psnr_decoded = None
    if decoded:
        psnr_decoded = math.fsum(SimulatorManager.psnr(mse, config.psnr_ceiling) for mse in decoded) / len(decoded)
    return RatePointReport(
        scheme=config.scheme,
        plr=config.channel.packet_loss_rate,
        abel=config.channel.avg_burst_len,
        r_c=target,
        plan=plan,
        trials=trials,
        mean_mse=mean,
        stderr_mse=stderr,
        mean_mse_decoded=mean_decoded,
        mean_psnr=psnr_all,
        mean_psnr_decoded=psnr_decoded,
        decoded_ratio=len(decoded) / trials,
        expected_mse=expected,
    )
