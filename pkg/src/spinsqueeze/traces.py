"""PSD traces in shot-noise units and their tabular serialization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import TWO_PI


def to_db(values_sn):
    """10 log10 of a PSD in shot-noise units."""
    return 10.0 * np.log10(np.asarray(values_sn, dtype=float))


def from_db(values_db):
    return 10.0 ** (np.asarray(values_db, dtype=float) / 10.0)


def _frozen_array(x, dtype=float):
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PsdTrace:
    """A two-sided homodyne PSD normalized to the vacuum level (vacuum = 1).

    ``grid`` holds angular Fourier frequencies (rad/s) and ``angle`` the
    detected quadrature, Q = sin(angle) X + cos(angle) P.
    """

    grid: np.ndarray
    values_sn: np.ndarray
    angle: float

    def __post_init__(self):
        grid = _frozen_array(self.grid)
        values = _frozen_array(self.values_sn)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise ValueError("grid and values_sn must be 1-D arrays of equal length")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values_sn", values)
        object.__setattr__(self, "angle", float(self.angle))

    @property
    def convention(self) -> str:
        return "two-sided"

    @property
    def freq_hz(self) -> np.ndarray:
        return self.grid / TWO_PI

    @property
    def values_db(self) -> np.ndarray:
        return to_db(self.values_sn)

    def __len__(self):
        return len(self.grid)

    def rows(self):
        """Tidy rows ``(freq_hz, psd_sn, angle_rad)``."""
        f = self.freq_hz
        return [(float(f[k]), float(self.values_sn[k]), self.angle) for k in range(len(f))]

    def to_dict(self) -> dict:
        return {
            "angle_rad": self.angle,
            "freq_hz": [float(x) for x in self.freq_hz],
            "psd_sn": [float(x) for x in self.values_sn],
        }


def validate_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("frequency grid must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(grid)):
        raise ValueError("frequency grid must be finite")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("frequency grid must be strictly increasing")
    return grid


def format_float(x: float) -> str:
    """Shortest repr that round-trips; shared by CSV and JSON writers."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)
