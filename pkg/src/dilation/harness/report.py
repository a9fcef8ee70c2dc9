"""Error tables and log-log slope fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["fit_slope", "ReportRow", "ErrorReport", "format_value"]


def fit_slope(points) -> float:
    """Least-squares slope of ``log(error)`` against ``log(param)``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError("need at least three (param, error) pairs")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("slope fitting needs positive finite values")
    slope, _ = np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)
    return float(slope)


def format_value(v) -> str:
    return "nan" if v is None else f"{float(v):.12g}"


@dataclass
class ReportRow:
    param: float
    l2_rel: float
    h1_rel: float
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)


@dataclass
class ErrorReport:
    """Rows of relative errors against a sweep parameter."""

    name: str
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, param, l2_rel, h1_rel, seconds=0.0, **extra):
        if l2_rel < 0 or h1_rel < 0:
            raise ValueError("errors must be nonnegative")
        self.rows.append(ReportRow(float(param), float(l2_rel), float(h1_rel), float(seconds),
                                   extra))

    @property
    def params(self) -> np.ndarray:
        return np.array([r.param for r in self.rows])

    @property
    def l2(self) -> np.ndarray:
        return np.array([r.l2_rel for r in self.rows])

    @property
    def h1(self) -> np.ndarray:
        return np.array([r.h1_rel for r in self.rows])

    def _slope(self, values):
        if len(self.rows) < 3:
            return None
        try:
            return fit_slope(zip(self.params, values))
        except ValueError:
            return None

    @property
    def slope(self) -> float | None:
        """Fitted order of the L2 column (``None`` with fewer than 3 rows)."""
        return self._slope(self.l2)

    @property
    def h1_slope(self) -> float | None:
        return self._slope(self.h1)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    def csv_text(self) -> str:
        lines = ["param,l2_rel,h1_rel,seconds"]
        for r in self.rows:
            lines.append(",".join(format_value(v) for v in (r.param, r.l2_rel, r.h1_rel, r.seconds)))
        lines.append(f"# slope={format_value(self.slope)}")
        return "\n".join(lines) + "\n"

    def __str__(self):
        head = f"{self.name}: slope={format_value(self.slope)} h1_slope={format_value(self.h1_slope)}"
        body = [f"  {r.param:<12.6g} l2={r.l2_rel:.4e} h1={r.h1_rel:.4e} ({r.seconds:.1f}s)"
                for r in self.rows]
        return "\n".join([head] + body)


def is_close_ratio(a, b, lo=0.5, hi=2.0) -> bool:
    return b > 0 and lo <= a / b <= hi and math.isfinite(a / b)
