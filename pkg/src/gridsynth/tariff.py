"""Dynamic time-of-use tariff schedule.

A schedule maps every (day-of-week, half-hour slot) cell to one of three
price tiers. The default marks weekday 16:00-20:00 as High, 00:00-06:00 as
Low every day, and everything else Normal. Real trial timetables can be
loaded from a JSON or TOML file carrying the full 7x48 grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

HIGH = "High"
NORMAL = "Normal"
LOW = "Low"
UNKNOWN = "Unknown"

TIERS = (HIGH, NORMAL, LOW)

SLOTS_PER_DAY = 48

# 16:00-20:00 in half-hour slots (16*2 .. 20*2-1)
DEFAULT_PEAK_WINDOW = (32, 39)


@dataclass
class TariffSchedule:
    """7x48 grid of tariff tiers plus the daily peak window.

    grid[dow][slot] is one of "High"/"Normal"/"Low"; dow 0 is Monday.
    """

    grid: list = field(default_factory=list)
    peak_window: tuple = DEFAULT_PEAK_WINDOW

    def __post_init__(self):
        if not self.grid:
            self.grid = _default_grid()
        if len(self.grid) != 7 or any(len(row) != SLOTS_PER_DAY for row in self.grid):
            raise ValidationError("tariff grid must be 7 x 48")
        for row in self.grid:
            for tier in row:
                if tier not in TIERS:
                    raise ValidationError(f"unknown tariff tier {tier!r}")
        lo, hi = self.peak_window
        if not (0 <= lo <= hi < SLOTS_PER_DAY):
            raise ValidationError("peak_window must be a non-empty slot range inside 0..47")

    def tier(self, day_of_week: int, slot: int) -> str:
        return self.grid[day_of_week][slot]

    def is_peak(self, slot: int) -> bool:
        lo, hi = self.peak_window
        return lo <= slot <= hi

    @classmethod
    def from_file(cls, path) -> "TariffSchedule":
        """Load a schedule from a .json or .toml file.

        Expected keys: ``grid`` (list of 7 lists of 48 tier names) and an
        optional ``peak_window`` pair of slot indices.
        """
        path = Path(path)
        if path.suffix.lower() == ".toml":
            try:
                import tomllib  # py311+
            except ImportError:
                import tomli as tomllib
            payload = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            payload = json.loads(path.read_text(encoding="utf-8"))
        grid = payload.get("grid")
        if grid is None:
            raise ValidationError(f"{path}: missing 'grid'")
        peak = tuple(payload.get("peak_window", DEFAULT_PEAK_WINDOW))
        return cls(grid=grid, peak_window=peak)

    def to_file(self, path) -> None:
        payload = {"grid": self.grid, "peak_window": list(self.peak_window)}
        Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


def _default_grid():
    grid = []
    for dow in range(7):
        row = []
        for slot in range(SLOTS_PER_DAY):
            if slot < 12:  # 00:00-06:00
                row.append(LOW)
            elif dow < 5 and 32 <= slot <= 39:  # weekday 16:00-20:00
                row.append(HIGH)
            else:
                row.append(NORMAL)
        grid.append(row)
    return grid


def default_schedule() -> TariffSchedule:
    return TariffSchedule()
