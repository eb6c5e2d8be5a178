"""Rate metrics: bits per point and the time-integrated TB-Rate."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

__all__ = ["bpp", "TimeBppCurve", "tb_rate"]


def bpp(total_bits: float, n_points: int) -> float:
    if n_points <= 0:
        raise ValueError("n_points must be positive")
    return float(total_bits) / n_points


@dataclass(frozen=True)
class TimeBppCurve:
    """Encoding time (seconds, strictly increasing) against bpp."""

    times: tuple
    bpps: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        b = np.asarray(self.bpps, dtype=np.float64)
        if t.ndim != 1 or t.shape != b.shape or len(t) < 2:
            raise ValueError("a curve needs at least two (time, bpp) points")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(b))):
            raise ValueError("curve values must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("curve times must be strictly increasing")
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "bpps", tuple(b.tolist()))

    @classmethod
    def from_trajectory(cls, trajectory, offset: float = 0.0) -> "TimeBppCurve":
        """Curve from overfitting trajectory entries (``seconds``, ``bpp``)."""
        return cls(tuple(offset + e["seconds"] for e in trajectory), tuple(e["bpp"] for e in trajectory))

    def integral(self, t0: float, t1: float) -> float:
        t, b = np.asarray(self.times), np.asarray(self.bpps)
        if t0 < t[0] or t1 > t[-1] or t1 <= t0:
            raise ValueError("integration range outside the curve")
        inner = t[(t > t0) & (t < t1)]
        grid = np.concatenate([[t0], inner, [t1]])
        return float(trapezoid(np.interp(grid, t, b), grid))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["enc_time_s", "bpp"])
            w.writerows(zip(self.times, self.bpps))
        return path

    @classmethod
    def from_csv(cls, path) -> "TimeBppCurve":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(tuple(float(r["enc_time_s"]) for r in rows), tuple(float(r["bpp"]) for r in rows))


def tb_rate(curve_a: TimeBppCurve, curve_b: TimeBppCurve) -> float:
    """Percent change of A's time-integrated bpp relative to B over the shared
    time span; negative means A spends fewer bits."""
    t0 = max(curve_a.times[0], curve_b.times[0])
    t1 = min(curve_a.times[-1], curve_b.times[-1])
    if t1 <= t0:
        raise ValueError("curves do not overlap in time")
    return (curve_a.integral(t0, t1) / curve_b.integral(t0, t1) - 1.0) * 100.0
