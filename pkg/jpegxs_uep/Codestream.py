"""
This module defines the class-level model of a JPEG-XS codestream, the
`CodestreamProfile`, and the `CodestreamManager` class to load and query it.

A codestream compressed at ``R_S`` bytes per frame is split in three classes of
decreasing importance: class 1 (headers, low-frequency significance and bitplane
counts), class 2 (low-frequency data) and class 3 (high-frequency content). A
profile tabulates the class sizes and the source distortion ``D_S`` on a grid of
source rates, together with the three channel distortion constants.

.. list-table:: Profile File Keys
   :header-rows: 1

   * - Key
     - Description
   * - name (str)
     - Identifier of the profile.
   * - rate_grid (list of int)
     - Strictly ascending source rates in bytes per frame.
   * - class_sizes (list of [int, int, int])
     - Size of each class at every grid rate; each triple sums to its rate.
   * - source_mse (list of float)
     - Strictly decreasing source distortion ``D_S`` (MSE) at every grid rate.
   * - delta (float)
     - MSE increase per percent of lost class-2 packets (default 90).
   * - delta_all (float)
     - MSE of a dropped frame (default 9000).
   * - delta_hf (float)
     - MSE of discarding all high-frequency content (default 4).
   * - note (str, optional)
     - Free text provenance.

To use the methods in this module, import `UepActor` from `jpegxs_uep`.
For example:

.. code-block:: py

    from jpegxs_uep import UepActor

    profile = UepActor.load_profile("default")
    sizes = UepActor.class_sizes(profile, 400000)
    mse = UepActor.source_distortion(profile, 400000)
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import List, Union

import numpy as np
from pydantic import ValidationError
from sqlmodel import SQLModel, Field

from .utils import ProfileError, RateRangeError, get_setting

logger = logging.getLogger(__name__)

NUM_CLASSES = 3


class CodestreamProfile(SQLModel):
    name: str
    rate_grid: List[int]
    class_sizes: List[List[int]]
    source_mse: List[float]
    delta: float = Field(default=90.0)
    delta_all: float = Field(default=9000.0)
    delta_hf: float = Field(default=4.0)
    note: str = Field(default="")

    @property
    def min_rate(self) -> int:
        return self.rate_grid[0]

    @property
    def max_rate(self) -> int:
        return self.rate_grid[-1]

    def check(self) -> "CodestreamProfile":
        """Raises ProfileError naming the first broken invariant."""
        grid = self.rate_grid
        if len(grid) < 2:
            raise ProfileError(f"Profile '{self.name}': rate_grid needs at least 2 points, got {len(grid)}")
        if len(self.class_sizes) != len(grid):
            raise ProfileError(
                f"Profile '{self.name}': class_sizes has {len(self.class_sizes)} rows for {len(grid)} grid rates"
            )
        if len(self.source_mse) != len(grid):
            raise ProfileError(
                f"Profile '{self.name}': source_mse has {len(self.source_mse)} values for {len(grid)} grid rates"
            )
        for idx, rate in enumerate(grid):
            if rate <= 0:
                raise ProfileError(f"Profile '{self.name}': rate_grid[{idx}]={rate} must be positive")
            if idx and rate <= grid[idx - 1]:
                raise ProfileError(f"Profile '{self.name}': rate_grid must be strictly ascending at index {idx}")
            sizes = self.class_sizes[idx]
            if len(sizes) != NUM_CLASSES:
                raise ProfileError(f"Profile '{self.name}': class_sizes[{idx}] must hold {NUM_CLASSES} sizes")
            if any(size < 0 for size in sizes):
                raise ProfileError(f"Profile '{self.name}': class_sizes[{idx}]={sizes} has a negative size")
            if sum(sizes) != rate:
                raise ProfileError(
                    f"Profile '{self.name}': class_sizes[{idx}] sums to {sum(sizes)}, expected rate {rate}"
                )
            mse = self.source_mse[idx]
            if mse < 0:
                raise ProfileError(f"Profile '{self.name}': source_mse[{idx}]={mse} is negative")
            if idx and mse >= self.source_mse[idx - 1]:
                raise ProfileError(
                    f"Profile '{self.name}': source_mse must be strictly decreasing, "
                    f"source_mse[{idx}]={mse} >= source_mse[{idx - 1}]={self.source_mse[idx - 1]}"
                )
        for key in ("delta", "delta_all", "delta_hf"):
            if getattr(self, key) < 0:
                raise ProfileError(f"Profile '{self.name}': {key} must be nonnegative")
        if self.delta_all < self.delta_hf:
            raise ProfileError(
                f"Profile '{self.name}': delta_all={self.delta_all} must be >= delta_hf={self.delta_hf}"
            )
        return self

    def checksum(self) -> str:
        """sha256 of the canonical JSON form, stable across key order and whitespace."""
        canonical = json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def grid_arrays(self):
        return (
            np.asarray(self.rate_grid, dtype=float),
            np.asarray(self.class_sizes, dtype=float),
            np.asarray(self.source_mse, dtype=float),
        )


def _check_range(profile: CodestreamProfile, r_s: float) -> None:
    if not profile.min_rate <= r_s <= profile.max_rate:
        raise RateRangeError(
            f"Source rate {r_s} outside profile '{profile.name}' range [{profile.min_rate}, {profile.max_rate}]"
        )


def resolve_profile_path(path_or_name: Union[str, Path]) -> Path:
    """A path to an existing file, or a profile name looked up in the profile directory."""
    path = Path(path_or_name)
    if path.is_file():
        return path
    candidate = Path(get_setting("profile_dir")) / f"{path_or_name}.json"
    if candidate.is_file():
        return candidate
    raise ProfileError(f"No profile file '{path_or_name}' (also looked for {candidate})")


class CodestreamManager:
    @staticmethod
    def load_profile(path_or_name: Union[str, Path]) -> CodestreamProfile:
        """Loads and validates a profile file.

        Args:
            path_or_name (str | Path): A JSON profile file, or the name of a profile
                in the profile directory (``JPEGXS_UEP_PROFILE_DIR``, default: the
                profiles bundled with the package).

        Returns:
            CodestreamProfile: The validated profile.

        Raises:
            ProfileError: The file cannot be parsed or breaks an invariant.

        Example:
            .. code-block:: py

                profile = UepActor.load_profile("default")
        """
        path = resolve_profile_path(path_or_name)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ProfileError(f"Profile file {path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ProfileError(f"Profile file {path} must hold a JSON object")
        try:
            profile = CodestreamProfile.model_validate(raw)
        except ValidationError as e:
            raise ProfileError(f"Profile file {path} has invalid fields: {e}") from e
        logger.debug("Loaded profile '%s' from %s (%d grid rates)", profile.name, path, len(profile.rate_grid))
        return profile.check()

    @staticmethod
    def class_sizes(profile: CodestreamProfile, r_s: float) -> List[float]:
        """Sizes of the three classes at source rate ``r_s``.

        Linear interpolation of each class between grid rates, rescaled so that
        the three sizes sum to ``r_s``.

        Raises:
            RateRangeError: ``r_s`` is outside the profile grid.
        """
        _check_range(profile, r_s)
        grid, sizes, _ = profile.grid_arrays()
        interpolated = np.array([np.interp(r_s, grid, sizes[:, i]) for i in range(NUM_CLASSES)])
        total = interpolated.sum()
        if total > 0:
            interpolated *= r_s / total
        return [float(size) for size in interpolated]

    @staticmethod
    def source_distortion(profile: CodestreamProfile, r_s: float) -> float:
        """``D_S(r_s)`` by linear interpolation of the tabulated curve."""
        _check_range(profile, r_s)
        grid, _, mse = profile.grid_arrays()
        return float(np.interp(r_s, grid, mse))

    @staticmethod
    def source_slope(profile: CodestreamProfile, r_s: float) -> float:
        """Derivative of the piecewise-linear ``D_S`` in MSE per byte, never positive.

        Inside a segment this is the segment slope; on an interior grid rate it
        is the mean of the two adjacent slopes.
        """
        _check_range(profile, r_s)
        grid, _, mse = profile.grid_arrays()
        slopes = np.diff(mse) / np.diff(grid)
        hit = np.flatnonzero(grid == r_s)
        if hit.size:
            idx = int(hit[0])
            adjacent = slopes[max(idx - 1, 0):min(idx + 1, slopes.size)]
            slope = float(adjacent.mean())
        else:
            segment = int(np.searchsorted(grid, r_s)) - 1
            slope = float(slopes[segment])
        return min(slope, 0.0)
