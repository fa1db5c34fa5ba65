"""
This module models the packet loss channel: a two-state Gilbert chain (or its
memoryless Bernoulli special case), seeded loss pattern generation, and the exact
distribution of the number of lost packets in an ``n``-packet interleaving block.

The Gilbert chain loses a packet if and only if it sits in the bad state. It is
parameterized by the packet loss rate and the average burst error length (ABEL):
``p_bg = 1 / ABEL`` and ``p_gb = plr * p_bg / (1 - plr)``. A Bernoulli channel is
the chain with ``p_gb + p_bg = 1``, whose states are independent from one packet
to the next.

.. list-table:: Classes
   :header-rows: 1

   * - Class Name
     - Description
   * - ChannelSpec
     - Channel kind, packet loss rate and average burst length.
   * - GilbertParams
     - Transition probabilities of the two-state chain.
   * - LossPmf
     - ``p(Y = j)`` for ``j = 0..n`` losses in one block, with tail sums.
   * - ChannelManager
     - Static methods to fit, sample and analyse channels.

.. code-block:: py

    from jpegxs_uep import UepActor
    from jpegxs_uep.Channel import ChannelSpec

    params = UepActor.fit_gilbert(ChannelSpec(kind="gilbert", packet_loss_rate=0.05, avg_burst_len=20))
    pmf = UepActor.block_loss_pmf(params, 255)
    p_lost = UepActor.tail_prob(pmf, 200)
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from sqlmodel import SQLModel, Field

from .utils import ParameterError

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator]

# Blocks drawn from one realization when building a histogram
HISTOGRAM_CHUNK = 20_000


class ChannelKind(str, Enum):
    gilbert = "gilbert"
    bernoulli = "bernoulli"


class ChannelSpec(SQLModel):
    kind: ChannelKind = Field(default=ChannelKind.gilbert)
    packet_loss_rate: float = Field(ge=0.0, lt=1.0)
    avg_burst_len: float = Field(default=1.0, ge=1.0)


class GilbertParams(SQLModel):
    p_gb: float = Field(ge=0.0, le=1.0)
    p_bg: float = Field(gt=0.0, le=1.0)

    @property
    def loss_rate(self) -> float:
        """Stationary probability of the bad (loss) state."""
        total = self.p_gb + self.p_bg
        return self.p_gb / total if total > 0 else 0.0

    @property
    def burst_len(self) -> float:
        return 1.0 / self.p_bg


@dataclass(frozen=True)
class LossPmf:
    n: int
    pmf: np.ndarray

    @property
    def survival(self) -> np.ndarray:
        """``survival[m] = p(Y > m)`` for ``m = 0..n``."""
        reverse = np.cumsum(self.pmf[::-1])[::-1]
        return np.append(reverse[1:], 0.0)

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.n + 1), self.pmf))

    def tails(self) -> np.ndarray:
        """``p(Y > n - k)`` for every ``k = 1..n``, indexed by ``k - 1``."""
        return self.survival[self.n - np.arange(1, self.n + 1)]

    def loss_fraction_tails(self) -> np.ndarray:
        """``sum_{j > n - k} (j / n) p(Y = j)`` for every ``k = 1..n``, indexed by ``k - 1``."""
        weighted = np.arange(self.n + 1) * self.pmf / self.n
        reverse = np.cumsum(weighted[::-1])[::-1]
        survival = np.append(reverse[1:], 0.0)
        return survival[self.n - np.arange(1, self.n + 1)]


class ChannelManager:
    @staticmethod
    def fit_gilbert(spec: ChannelSpec) -> GilbertParams:
        """Derives the chain transition probabilities from a channel spec.

        Args:
            spec (ChannelSpec): Loss rate and, for Gilbert channels, the average
                burst error length in packets.

        Returns:
            GilbertParams: ``p_bg = 1 / ABEL`` and ``p_gb`` such that the stationary
            loss probability equals ``packet_loss_rate``. A Bernoulli channel yields
            ``p_gb = plr`` and ``p_bg = 1 - plr``.

        Raises:
            ParameterError: The loss rate cannot be reached with the requested
                burst length (``p_gb`` would exceed 1).

        Example:
            .. code-block:: py

                params = UepActor.fit_gilbert(ChannelSpec(packet_loss_rate=0.05, avg_burst_len=20))
                # p_bg = 0.05, p_gb = 0.0026315...
        """
        plr = spec.packet_loss_rate
        if spec.kind == ChannelKind.bernoulli:
            return GilbertParams(p_gb=plr, p_bg=1.0 - plr)
        p_bg = 1.0 / spec.avg_burst_len
        p_gb = plr * p_bg / (1.0 - plr)
        if p_gb > 1.0:
            raise ParameterError(
                f"Infeasible Gilbert channel: loss rate {plr} with burst length "
                f"{spec.avg_burst_len} needs p_gb={p_gb:.4f} > 1"
            )
        return GilbertParams(p_gb=p_gb, p_bg=p_bg)

    @staticmethod
    def sample_losses(params: GilbertParams, n_packets: int, seed: SeedLike) -> np.ndarray:
        """Draws one loss pattern from the chain, started in its stationary distribution.

        Sojourn times are geometric, so whole runs of good and bad states are drawn
        at once rather than one packet at a time.

        Args:
            params (GilbertParams): The chain.
            n_packets (int): Length of the pattern.
            seed (int | np.random.Generator): Seed of a fresh PCG64 generator, or a
                generator to continue drawing from.

        Returns:
            np.ndarray: Boolean mask, True where the packet is lost.
        """
        rng = np.random.default_rng(seed)
        mask = np.zeros(n_packets, dtype=bool)
        if n_packets <= 0 or params.p_gb == 0.0:
            return mask
        bad = bool(rng.random() < params.loss_rate)
        cycles = int(n_packets / (1.0 / params.p_gb + 1.0 / params.p_bg)) + 16
        runs, states = [], []
        covered = 0
        while covered < n_packets:
            bad_runs = rng.geometric(params.p_bg, size=cycles)
            good_runs = rng.geometric(params.p_gb, size=cycles)
            if bad:
                pair = np.column_stack((bad_runs, good_runs))
            else:
                pair = np.column_stack((good_runs, bad_runs))
            runs.append(pair.ravel())
            states.append(np.tile([bad, not bad], cycles))
            covered += int(pair.sum())
        mask[:] = np.repeat(np.concatenate(states), np.concatenate(runs))[:n_packets]
        return mask

    @staticmethod
    def block_loss_pmf(params: GilbertParams, n: int) -> LossPmf:
        """Exact distribution of the number of losses in ``n`` consecutive packets.

        Dynamic programming over (position, chain state, losses so far), starting
        from the stationary state distribution.

        Args:
            params (GilbertParams): The chain.
            n (int): Block size in packets, at most 255.

        Returns:
            LossPmf: ``n + 1`` probabilities summing to 1.
        """
        if not 1 <= n <= 255:
            raise ParameterError(f"Block size must be in [1, 255], got {n}")
        p_gb, p_bg = params.p_gb, params.p_bg
        pi_bad = params.loss_rate
        good = np.zeros(n + 1)
        bad = np.zeros(n + 1)
        good[0] = 1.0 - pi_bad
        bad[1] = pi_bad
        for _ in range(n - 1):
            next_good = good * (1.0 - p_gb) + bad * p_bg
            next_bad = np.zeros(n + 1)
            next_bad[1:] = good[:-1] * p_gb + bad[:-1] * (1.0 - p_bg)
            good, bad = next_good, next_bad
        pmf = good + bad
        pmf = np.clip(pmf, 0.0, None)
        return LossPmf(n=n, pmf=pmf / pmf.sum())

    @staticmethod
    def tail_prob(pmf: LossPmf, k: int) -> float:
        """Probability that more than ``n - k`` packets of a block are lost.

        Example:
            .. code-block:: py

                UepActor.tail_prob(pmf, pmf.n)  # p(Y > 0)
        """
        if not 1 <= k <= pmf.n:
            raise ParameterError(f"Information length must be in [1, {pmf.n}], got {k}")
        return float(pmf.survival[pmf.n - k])

    @staticmethod
    def sample_block_histogram(params: GilbertParams, n: int, blocks: int, seed: SeedLike) -> LossPmf:
        """Empirical loss count distribution over ``blocks`` consecutive blocks.

        Blocks are cut from realizations of at most ``HISTOGRAM_CHUNK`` blocks,
        each started in the stationary distribution, so every block starts from
        the stationary distribution like the analytic pmf assumes.
        """
        rng = np.random.default_rng(seed)
        histogram = np.zeros(n + 1)
        for start in range(0, blocks, HISTOGRAM_CHUNK):
            size = min(HISTOGRAM_CHUNK, blocks - start)
            counts = ChannelManager.sample_losses(params, n * size, rng).reshape(size, n).sum(axis=1)
            histogram += np.bincount(counts, minlength=n + 1)
        return LossPmf(n=n, pmf=histogram / blocks)

    @staticmethod
    def total_variation(a: LossPmf, b: LossPmf) -> float:
        if a.n != b.n:
            raise ParameterError(f"Cannot compare pmfs of blocks {a.n} and {b.n}")
        return float(0.5 * np.abs(a.pmf - b.pmf).sum())
