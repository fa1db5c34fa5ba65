"""
This module selects the source rate ``R_S`` and the protection vector
``K = [K_1, K_2, K_3]`` that minimize the expected distortion of a frame sent on
a known lossy channel, for a given channel rate ``R_C``.

The expected distortion is ``D_T = D_S(R_S) + sum_i D_C,i(K_i)`` with

* ``D_C,1 = Delta_ALL p(Y > N - K_1)``: a corrupted class 1 drops the frame,
* ``D_C,2 = sum_{j > N - K_2} 100 (j / N) delta p(Y = j)``: class 2 degrades
  in proportion to the lost packets,
* ``D_C,3 = Delta_HF p(Y > N - K_3)``: a corrupted class 3 is discarded,

and the channel rate is ``R_C = N sum_i R_S,i / K_i``. For a frame spread over
``B`` independent blocks, class 1 fails when any block fails, class 3 costs
``Delta_HF`` times the fraction of failed blocks (or all of it, with
``hf_all_or_nothing``) and class 2 averages over the blocks.

Unequal protection (UEP) alternates a source rate update and a per-class ``K``
update for a fixed Lagrange multiplier, and bisects the multiplier until the
target channel rate is met. Equal protection (EEP) scans a single ``K`` for all
classes.

.. list-table:: Classes
   :header-rows: 1

   * - Class Name
     - Description
   * - ProtectionPlan
     - Chosen source rate, ``K`` vector, channel rate, multiplier and expected MSE.
   * - ChannelDistortionModel
     - Loss pmf and distortion constants the objective is built from.
   * - OptimizerManager
     - Static methods for the distortion terms and both solvers.

.. code-block:: py

    from jpegxs_uep import UepActor

    model = UepActor.distortion_model(profile, pmf, target_r_c=400000)
    plan = UepActor.solve_uep(400000, profile, model)
    print(plan.k, plan.expected_distortion)
"""

import functools
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sqlmodel import SQLModel, Field

from .Channel import LossPmf
from .Codestream import CodestreamManager, CodestreamProfile
from .Packetizer import PacketizerManager, integer_class_sizes
from .utils import ConvergenceError, LayoutError, RateRangeError

logger = logging.getLogger(__name__)

LAMBDA_MIN = 1e-12
LAMBDA_MAX = 1e3
MAX_INNER_ITERATIONS = 50
MAX_BISECTIONS = 200
MAX_POLISH_ROUNDS = 20


class ProtectionPlan(SQLModel):
    scheme: str = Field(default="uep")
    r_s: float
    k: List[int]
    n: int = Field(default=255)
    r_c: float
    blocks: int = Field(default=1)
    lagrange_multiplier: float = Field(default=0.0)
    expected_distortion: float = Field(default=0.0)
    class_sizes: List[float] = Field(default_factory=list)
    realized_r_c: Optional[int] = Field(default=None)
    realized_blocks: Optional[int] = Field(default=None)


@dataclass(frozen=True)
class ChannelDistortionModel:
    pmf: LossPmf
    delta: float
    delta_all: float
    delta_hf: float
    blocks: int = 1
    packet_len: int = 1500
    hf_all_or_nothing: bool = False

    @property
    def n(self) -> int:
        return self.pmf.n

    @functools.cached_property
    def class_terms(self) -> np.ndarray:
        """``D_C,i(K)`` for every class (rows) and every ``K = 1..n`` (column ``K - 1``)."""
        tails = self.pmf.tails()
        frame_tails = 1.0 - (1.0 - tails) ** self.blocks
        hf = frame_tails if self.hf_all_or_nothing else tails
        terms = np.vstack([
            self.delta_all * frame_tails,
            100.0 * self.delta * self.pmf.loss_fraction_tails(),
            self.delta_hf * hf,
        ])
        terms.flags.writeable = False
        return terms


def frame_blocks(r_c: float, n: int, packet_len: int) -> int:
    """Interleaving blocks needed to carry ``r_c`` channel bytes."""
    return max(1, math.ceil(r_c / (n * packet_len)))


def channel_rate(sizes: Sequence[float], k: Sequence[int], n: int) -> float:
    return n * sum(size / k_i for size, k_i in zip(sizes, k))


def _largest_argmin(values: np.ndarray) -> int:
    # ties go to the larger K, i.e. less redundancy
    return int(np.flatnonzero(values == values.min())[-1])


def _pin_source_rate(profile: CodestreamProfile, k: Sequence[int], n: int, target_r_c: float) -> Optional[float]:
    """Largest source rate whose channel rate under ``k`` does not exceed the target.

    Returns None when even the lowest grid rate is too expensive.
    """
    grid, sizes, _ = profile.grid_arrays()
    rc_grid = n * (sizes / np.asarray(k, dtype=float)).sum(axis=1)
    if rc_grid[0] > target_r_c:
        return None
    if rc_grid[-1] <= target_r_c:
        return float(grid[-1])
    idx = int(np.flatnonzero(rc_grid <= target_r_c)[-1])
    lo_rc, hi_rc = rc_grid[idx], rc_grid[idx + 1]
    if hi_rc <= lo_rc:
        return float(grid[idx])
    share = (target_r_c - lo_rc) / (hi_rc - lo_rc)
    return float(grid[idx] + share * (grid[idx + 1] - grid[idx]))


class OptimizerManager:
    @staticmethod
    def distortion_model(profile: CodestreamProfile, pmf: LossPmf, target_r_c: Optional[float] = None, packet_len: int = 1500, hf_all_or_nothing: bool = False, blocks: Optional[int] = None) -> ChannelDistortionModel:
        """Builds the channel distortion model for frames of ``target_r_c`` channel bytes."""
        if blocks is None:
            blocks = frame_blocks(target_r_c, pmf.n, packet_len) if target_r_c else 1
        return ChannelDistortionModel(
            pmf=pmf,
            delta=profile.delta,
            delta_all=profile.delta_all,
            delta_hf=profile.delta_hf,
            blocks=blocks,
            packet_len=packet_len,
            hf_all_or_nothing=hf_all_or_nothing,
        )

    @staticmethod
    def dc_class(i: int, k: int, model: ChannelDistortionModel, class_bytes: Optional[float] = None) -> float:
        """Expected channel distortion of class ``i`` (1, 2 or 3) protected with ``K_i = k``.

        An empty class (``class_bytes == 0``) cannot be corrupted and costs nothing.

        Example:
            .. code-block:: py

                # Bernoulli p=0.05, delta=90: 100 * 90 * 0.05 = 450
                UepActor.dc_class(2, 255, model)
        """
        if not 1 <= i <= 3:
            raise ValueError(f"Class index must be 1, 2 or 3, got {i}")
        if not 1 <= k <= model.n:
            raise ValueError(f"K_{i}={k} must be in [1, {model.n}]")
        if class_bytes is not None and class_bytes <= 0:
            return 0.0
        return float(model.class_terms[i - 1, k - 1])

    @staticmethod
    def expected_total_distortion(plan: ProtectionPlan, profile: CodestreamProfile, model: ChannelDistortionModel) -> float:
        """``D_S(r_s) + sum_i D_C,i(K_i)``, the objective both solvers minimize."""
        total = CodestreamManager.source_distortion(profile, plan.r_s)
        sizes = CodestreamManager.class_sizes(profile, plan.r_s)
        for i, (k_i, size) in enumerate(zip(plan.k, sizes), start=1):
            total += OptimizerManager.dc_class(i, k_i, model, size)
        return total

    @staticmethod
    def expected_frame_distortion(plan: ProtectionPlan, profile: CodestreamProfile, model: ChannelDistortionModel) -> Tuple[float, float]:
        """Exact expectation of the per-frame decode policy, under independent blocks.

        A dropped frame costs ``Delta_ALL`` alone, while the additive objective
        also charges the class 2 and 3 terms of frames that are dropped anyway.
        This is the value Monte Carlo runs converge to.

        Returns:
            Tuple[float, float]: ``(expected MSE over all frames, probability that the frame decodes)``.
        """
        pmf, n = model.pmf.pmf, model.n
        sizes = CodestreamManager.class_sizes(profile, plan.r_s)
        losses = np.arange(n + 1)
        fails = [(losses > n - k_i) & (size > 0) for k_i, size in zip(plan.k, sizes)]
        block_ok = float(pmf[~fails[0]].sum())
        decoded = block_ok ** model.blocks
        if decoded <= 0.0:
            return model.delta_all, 0.0
        class2 = float((losses / n * pmf)[~fails[0] & fails[1]].sum()) / block_ok
        hf_block = float(pmf[~fails[0] & fails[2]].sum()) / block_ok
        hf = 1.0 - (1.0 - hf_block) ** model.blocks if model.hf_all_or_nothing else hf_block
        kept = (
            CodestreamManager.source_distortion(profile, plan.r_s)
            + 100.0 * model.delta * class2
            + model.delta_hf * hf
        )
        return (1.0 - decoded) * model.delta_all + decoded * kept, decoded

    @staticmethod
    def solve_k_given_lambda(lam: float, r_s: float, profile: CodestreamProfile, model: ChannelDistortionModel) -> List[int]:
        """Per-class minimizer of ``D_C,i(K) + lam * n * R_S,i / K`` over ``K = 1..n``.

        The discrete counterpart of the stationarity condition
        ``lam = -K_i^2 / (n R_S,i) dD_C,i/dK_i``; ties go to the larger ``K``.
        """
        if lam <= 0:
            raise ValueError(f"Lagrange multiplier must be positive, got {lam}")
        sizes = CodestreamManager.class_sizes(profile, r_s)
        ks = np.arange(1, model.n + 1, dtype=float)
        chosen = []
        for i, size in enumerate(sizes):
            if size <= 0:
                chosen.append(model.n)
                continue
            cost = model.class_terms[i] + lam * model.n * size / ks
            chosen.append(_largest_argmin(cost) + 1)
        return chosen

    @staticmethod
    def solve_rs_given_lambda(lam: float, k: Sequence[int], profile: CodestreamProfile, n: int = 255) -> float:
        """Source rate minimizing ``D_S(R_S) + lam * R_C(R_S, K)`` for a fixed ``K``.

        Both terms are piecewise linear in ``R_S`` between grid rates, so the
        minimum lies on a grid rate; the scan clamps to the grid ends by design.
        """
        if lam <= 0:
            raise ValueError(f"Lagrange multiplier must be positive, got {lam}")
        grid, sizes, mse = profile.grid_arrays()
        rc_grid = n * (sizes / np.asarray(k, dtype=float)).sum(axis=1)
        return float(grid[int(np.argmin(mse + lam * rc_grid))])

    @staticmethod
    def solve_for_lambda(lam: float, profile: CodestreamProfile, model: ChannelDistortionModel) -> Dict:
        """Two-step iteration for one multiplier, from ``K = [n, n, n]`` to a fixed point.

        Raises:
            ConvergenceError: No fixed point within the iteration cap.
        """
        n = model.n
        k = [n, n, n]
        visited = {}
        r_s = float(profile.min_rate)
        for iteration in range(MAX_INNER_ITERATIONS):
            r_s = OptimizerManager.solve_rs_given_lambda(lam, k, profile, n)
            next_k = OptimizerManager.solve_k_given_lambda(lam, r_s, profile, model)
            state = (r_s, tuple(k))
            if next_k == k:
                return _iterate(r_s, k, lam, profile, model, iteration + 1)
            if state in visited:
                # two-step alternation came back to an earlier point: keep the best of the cycle
                cycle = list(visited)[visited[state]:]
                best = min(cycle, key=lambda s: _lagrangian(s[0], s[1], lam, profile, model))
                logger.debug("Cycle of %d iterates at lambda=%.3e, keeping K=%s", len(cycle), lam, best[1])
                return _iterate(best[0], list(best[1]), lam, profile, model, iteration + 1)
            visited[state] = len(visited)
            k = next_k
        raise ConvergenceError(
            f"No fixed point after {MAX_INNER_ITERATIONS} iterations at lambda={lam:.3e}",
            last_iterate={"lambda": lam, "r_s": r_s, "k": k},
        )

    @staticmethod
    def solve_uep(target_r_c: float, profile: CodestreamProfile, model: ChannelDistortionModel, tol: float = 0.01) -> ProtectionPlan:
        """Unequal protection plan for a channel budget of ``target_r_c`` bytes per frame.

        The multiplier is bisected on a log scale over ``[1e-12, 1e3]`` until the
        inner fixed point meets the target within ``tol``. The bracketing iterates
        are then pinned to the exact target rate, polished class by class at equal
        rate, and compared with the optimal equal protection plan, which is a
        feasible UEP plan too.

        Args:
            target_r_c (float): Channel bytes per frame.
            profile (CodestreamProfile): Codestream model.
            model (ChannelDistortionModel): Loss pmf and distortion constants.
            tol (float): Relative tolerance on the channel rate (default: 0.01).

        Returns:
            ProtectionPlan: Plan with ``r_c <= target_r_c * (1 + tol)``.

        Raises:
            RateRangeError: The target is below the lowest rate of the profile.
            ConvergenceError: The inner iteration did not converge.
        """
        if target_r_c < profile.min_rate:
            raise RateRangeError(f"Channel rate {target_r_c} is below the lowest source rate {profile.min_rate}")
        lo, hi = LAMBDA_MIN, LAMBDA_MAX
        sol_lo = OptimizerManager.solve_for_lambda(lo, profile, model)
        sol_hi = OptimizerManager.solve_for_lambda(hi, profile, model)
        extremes = [sol_lo, sol_hi]
        candidates = []
        if sol_lo["r_c"] > target_r_c * (1 + tol) and sol_hi["r_c"] <= target_r_c:
            for _ in range(MAX_BISECTIONS):
                mid = math.sqrt(lo * hi)
                sol = OptimizerManager.solve_for_lambda(mid, profile, model)
                if sol["r_c"] > sol_lo["r_c"] + 1e-6 or sol["r_c"] < sol_hi["r_c"] - 1e-6:
                    logger.warning(
                        "Channel rate not monotone in lambda: r_c(%.3e)=%.0f outside [%.0f, %.0f]",
                        mid, sol["r_c"], sol_hi["r_c"], sol_lo["r_c"],
                    )
                if abs(sol["r_c"] - target_r_c) <= tol * target_r_c:
                    candidates.append(sol)
                    if sol["r_c"] <= target_r_c:
                        break
                if sol["r_c"] > target_r_c:
                    lo, sol_lo = mid, sol
                else:
                    hi, sol_hi = mid, sol
                if hi / lo < 1 + 1e-9:
                    break
            candidates += [sol_lo, sol_hi]
            logger.debug("Lambda bracket [%.4e, %.4e], r_c in [%.0f, %.0f]", lo, hi, sol_hi["r_c"], sol_lo["r_c"])

        multiplier = math.sqrt(lo * hi)
        plans = []
        # bisection iterates first: min() keeps the first of equal plans
        for sol in candidates + extremes:
            plan = _pinned_plan(sol["k"], target_r_c, profile, model, sol["lambda"])
            if plan is not None:
                plans.append(plan)
        eep = OptimizerManager.solve_eep(target_r_c, profile, model)
        plans.append(eep.model_copy(update={"scheme": "uep", "lagrange_multiplier": multiplier}))

        best = min((_polish(plan, target_r_c, profile, model) for plan in plans), key=lambda p: p.expected_distortion)
        best = best.model_copy(update={
            "lagrange_multiplier": _stationary_multiplier(best, profile, model, best.lagrange_multiplier),
        })
        if best.expected_distortion > eep.expected_distortion + 1e-9:
            logger.warning("UEP plan worse than EEP under the model: %.4f > %.4f", best.expected_distortion, eep.expected_distortion)
        logger.info(
            "UEP plan for r_c=%.0f: r_s=%.0f K=%s lambda=%.4e expected MSE %.4f",
            target_r_c, best.r_s, best.k, best.lagrange_multiplier, best.expected_distortion,
        )
        return _with_layout(best, profile, model)

    @staticmethod
    def solve_eep(target_r_c: float, profile: CodestreamProfile, model: ChannelDistortionModel) -> ProtectionPlan:
        """Equal protection plan: one ``K`` for every class.

        Exhaustive scan of ``K = 1..n`` minimizing
        ``D_S(target_r_c * K / n) + Delta_ALL p(Y > n - K)``.
        """
        if target_r_c < profile.min_rate:
            raise RateRangeError(f"Channel rate {target_r_c} is below the lowest source rate {profile.min_rate}")
        n = model.n
        grid, _, mse = profile.grid_arrays()
        ks = np.arange(1, n + 1)
        r_s = np.minimum(target_r_c * ks / n, grid[-1])
        objective = np.interp(r_s, grid, mse) + model.class_terms[0]
        objective[r_s < grid[0]] = np.inf
        best = _largest_argmin(objective)
        k_star = int(ks[best])
        plan = ProtectionPlan(
            scheme="eep",
            r_s=float(r_s[best]),
            k=[k_star] * 3,
            n=n,
            r_c=float(r_s[best] * n / k_star),
            blocks=model.blocks,
        )
        plan = _evaluated(plan, profile, model)
        logger.info("EEP plan for r_c=%.0f: K*=%d r_s=%.0f", target_r_c, k_star, plan.r_s)
        return _with_layout(plan, profile, model)

    @staticmethod
    def coarse_grid_search(target_r_c: float, profile: CodestreamProfile, model: ChannelDistortionModel, k_values: Sequence[int] = tuple(range(15, 256, 40)), tol: float = 0.01) -> Optional[ProtectionPlan]:
        """Best plan over every ``K`` triple of ``k_values`` and every grid source rate.

        Only plans with ``r_c <= target_r_c * (1 + tol)`` compete. Returns None
        when no combination fits the budget.
        """
        grid, sizes, mse = profile.grid_arrays()
        k_values = np.asarray([k for k in k_values if 1 <= k <= model.n], dtype=int)
        k1, k2, k3 = np.meshgrid(k_values, k_values, k_values, indexing="ij")
        triples = np.stack([k1.ravel(), k2.ravel(), k3.ravel()], axis=1)
        rc = model.n * (sizes[None, :, :] / triples[:, None, :]).sum(axis=2)
        value = np.broadcast_to(mse, rc.shape).copy()
        for i in range(3):
            value += np.where(sizes[None, :, i] > 0, model.class_terms[i][triples[:, i] - 1][:, None], 0.0)
        value[rc > target_r_c * (1 + tol)] = np.inf
        if not np.isfinite(value).any():
            return None
        t, g = np.unravel_index(int(np.argmin(value)), value.shape)
        plan = ProtectionPlan(
            scheme="coarse",
            r_s=float(grid[g]),
            k=[int(k) for k in triples[t]],
            n=model.n,
            r_c=float(rc[t, g]),
            blocks=model.blocks,
        )
        return _evaluated(plan, profile, model)

    @staticmethod
    def unprotected_plan(target_r_c: float, profile: CodestreamProfile, model: ChannelDistortionModel) -> ProtectionPlan:
        """No parity at all: ``K = [n, n, n]`` and the whole budget goes to the source."""
        if target_r_c < profile.min_rate:
            raise RateRangeError(f"Channel rate {target_r_c} is below the lowest source rate {profile.min_rate}")
        r_s = float(min(target_r_c, profile.max_rate))
        plan = ProtectionPlan(scheme="unprotected", r_s=r_s, k=[model.n] * 3, n=model.n, r_c=r_s, blocks=model.blocks)
        return _with_layout(_evaluated(plan, profile, model), profile, model)

    @staticmethod
    def marginal_brackets(plan: ProtectionPlan, profile: CodestreamProfile, model: ChannelDistortionModel, steps: int = 0) -> List[Tuple[float, float]]:
        """Multipliers for which each ``K_i`` of ``plan`` is a discrete Lagrangian minimizer.

        The marginal of class ``i`` at ``K`` is
        ``[D_C,i(K+1) - D_C,i(K)] / [R_C,i(K) - R_C,i(K+1)]`` with ``R_C,i(K) = n R_S,i / K``.
        ``K_i`` is locally optimal for any multiplier between the marginals at
        ``K_i - 1`` and ``K_i``; ``steps`` widens the bracket by that many
        neighbouring marginals on each side.

        Returns:
            List[Tuple[float, float]]: ``(lower, upper)`` per class; ``lower`` is 0
            at ``K = 1`` and ``upper`` is infinite at ``K = n`` or for an empty class.
        """
        n = model.n
        sizes = CodestreamManager.class_sizes(profile, plan.r_s)
        brackets = []
        for i, (k_i, size) in enumerate(zip(plan.k, sizes)):
            if size <= 0:
                brackets.append((0.0, math.inf))
                continue
            terms = model.class_terms[i]

            def marginal(k: int) -> float:
                rate_drop = n * size / k - n * size / (k + 1)
                return float((terms[k] - terms[k - 1]) / rate_drop)

            lower = [marginal(k) for k in range(k_i - 1 - steps, k_i) if 1 <= k < n]
            upper = [marginal(k) for k in range(k_i, k_i + 1 + steps) if 1 <= k < n]
            brackets.append((
                min(lower) if lower else 0.0,
                max(upper) if len(upper) == steps + 1 else math.inf,
            ))
        return brackets


def _lagrangian(r_s: float, k: Sequence[int], lam: float, profile: CodestreamProfile, model: ChannelDistortionModel) -> float:
    plan = ProtectionPlan(r_s=r_s, k=list(k), n=model.n, r_c=0.0)
    sizes = CodestreamManager.class_sizes(profile, r_s)
    return OptimizerManager.expected_total_distortion(plan, profile, model) + lam * channel_rate(sizes, k, model.n)


def _iterate(r_s: float, k: Sequence[int], lam: float, profile: CodestreamProfile, model: ChannelDistortionModel, iterations: int) -> Dict:
    sizes = CodestreamManager.class_sizes(profile, r_s)
    return {"lambda": lam, "r_s": r_s, "k": list(k), "r_c": channel_rate(sizes, k, model.n), "iterations": iterations}


def _evaluated(plan: ProtectionPlan, profile: CodestreamProfile, model: ChannelDistortionModel) -> ProtectionPlan:
    sizes = CodestreamManager.class_sizes(profile, plan.r_s)
    return plan.model_copy(update={
        "class_sizes": sizes,
        "r_c": channel_rate(sizes, plan.k, plan.n),
        "expected_distortion": OptimizerManager.expected_total_distortion(plan, profile, model),
    })


def _pinned_plan(k: Sequence[int], target_r_c: float, profile: CodestreamProfile, model: ChannelDistortionModel, lam: float) -> Optional[ProtectionPlan]:
    r_s = _pin_source_rate(profile, k, model.n, target_r_c)
    if r_s is None:
        return None
    plan = ProtectionPlan(r_s=r_s, k=list(k), n=model.n, r_c=0.0, blocks=model.blocks, lagrange_multiplier=lam)
    return _evaluated(plan, profile, model)


def _polish(plan: ProtectionPlan, target_r_c: float, profile: CodestreamProfile, model: ChannelDistortionModel) -> ProtectionPlan:
    """Coordinate descent on each ``K_i`` with the source rate re-pinned to the target rate."""
    grid, sizes, mse = profile.grid_arrays()
    n = model.n
    ks = np.arange(1, n + 1, dtype=float)
    k = list(plan.k)
    best_value = plan.expected_distortion
    for _ in range(MAX_POLISH_ROUNDS):
        changed = False
        for i in range(3):
            others = sum(sizes[:, j] / k[j] for j in range(3) if j != i)
            rc = n * (others[None, :] + sizes[None, :, i] / ks[:, None])
            if np.any(np.diff(rc, axis=1) <= 0):
                return plan
            r_s = np.array([np.interp(target_r_c, row, grid) for row in rc])
            feasible = rc[:, 0] <= target_r_c
            value = np.interp(r_s, grid, mse)
            for j in range(3):
                sizes_j = np.interp(r_s, grid, sizes[:, j])
                term = model.class_terms[j][k[j] - 1] if j != i else model.class_terms[i]
                value = value + np.where(sizes_j > 0, term, 0.0)
            value[~feasible] = np.inf
            choice = _largest_argmin(value)
            if value[choice] < best_value - 1e-12 and choice + 1 != k[i]:
                k[i] = choice + 1
                best_value = float(value[choice])
                changed = True
        if not changed:
            break
    if k == list(plan.k):
        return plan
    polished = _pinned_plan(k, target_r_c, profile, model, plan.lagrange_multiplier)
    if polished is None or polished.expected_distortion > plan.expected_distortion:
        return plan
    return polished.model_copy(update={"scheme": plan.scheme})


def _stationary_multiplier(plan: ProtectionPlan, profile: CodestreamProfile, model: ChannelDistortionModel, hint: float) -> float:
    """Multiplier consistent with every ``K_i`` of the plan, as close to ``hint`` as the brackets allow."""
    for steps in (0, 1):
        brackets = OptimizerManager.marginal_brackets(plan, profile, model, steps)
        lo = max(b[0] for b in brackets)
        hi = min(b[1] for b in brackets)
        if lo > hi:
            continue
        if lo <= hint <= hi:
            return hint
        if lo > 0 and math.isfinite(hi):
            return math.sqrt(lo * hi)
        return lo if hint < lo else hi
    lo = max(b[0] for b in brackets)
    hi = min(b[1] for b in brackets)
    logger.warning("No multiplier brackets K=%s within one step: [%.4e, %.4e]", plan.k, lo, hi)
    return math.sqrt(lo * hi) if lo > 0 and hi > 0 else max(lo, hi)


def _with_layout(plan: ProtectionPlan, profile: CodestreamProfile, model: ChannelDistortionModel) -> ProtectionPlan:
    """Adds the rate actually sent once codewords are rounded to whole packets."""
    total = int(round(plan.r_s))
    sizes = integer_class_sizes(CodestreamManager.class_sizes(profile, plan.r_s), total)
    try:
        frame = PacketizerManager.frame_layout(sizes, plan.k, model.n, model.packet_len, min_blocks=model.blocks)
    except LayoutError:
        logger.warning("Plan K=%s has no layout within %d-byte packets", plan.k, model.packet_len)
        return plan
    return plan.model_copy(update={"realized_r_c": frame.realized_r_c, "realized_blocks": frame.blocks})
