"""Core domain types: demographics, trajectories, OD matrices, quantile tables."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from . import meshgrid

DAY_MINUTES = 1440
T_MIN = 15  # shortest admissible dwell-travel interval, minutes


class InputError(ValueError):
    """Malformed or inconsistent input data."""


class InfeasibleError(ValueError):
    """Inputs are well-formed but cannot support the requested computation."""


class InvariantError(RuntimeError):
    """An internal invariant was violated."""


class Sex(enum.Enum):
    MALE = "male"
    FEMALE = "female"


class AgeGroup(enum.Enum):
    AGE_20S = "20s"
    AGE_30S = "30s"
    AGE_40S = "40s"
    AGE_50S = "50s"
    AGE_60PLUS = "60plus"


_SEX_ORDER = {s: i for i, s in enumerate(Sex)}
_AGE_ORDER = {a: i for i, a in enumerate(AgeGroup)}


@dataclass(frozen=True)
class Demographic:
    sex: Sex
    age_group: AgeGroup

    @classmethod
    def parse(cls, sex: str, age_group: str) -> "Demographic":
        try:
            return cls(Sex(sex), AgeGroup(age_group))
        except ValueError as exc:
            raise InputError(f"unknown demographic ({sex!r}, {age_group!r})") from exc

    @classmethod
    def from_label(cls, label: str) -> "Demographic":
        """Parse ``"male/20s"`` style labels."""
        sex, _, age = label.partition("/")
        return cls.parse(sex.strip(), age.strip())

    @property
    def label(self) -> str:
        return f"{self.sex.value}/{self.age_group.value}"

    def sort_key(self) -> tuple[int, int]:
        return _SEX_ORDER[self.sex], _AGE_ORDER[self.age_group]

    def __lt__(self, other: "Demographic") -> bool:
        return self.sort_key() < other.sort_key()

    @classmethod
    def all(cls) -> list["Demographic"]:
        return [cls(s, a) for s in Sex for a in AgeGroup]


def hour_of(minute: int) -> int:
    return minute // 60


@dataclass(frozen=True)
class Stay:
    cell: str
    arrival: int


@dataclass(frozen=True)
class Trajectory:
    agent_id: int
    demographic: Demographic
    home: str
    stays: tuple[Stay, ...]

    def __post_init__(self):
        check_stays(self.home, [s.cell for s in self.stays], [s.arrival for s in self.stays])

    @classmethod
    def from_lists(cls, agent_id: int, demographic: Demographic, cells, arrivals) -> "Trajectory":
        return cls(agent_id, demographic, cells[0],
                   tuple(Stay(c, int(t)) for c, t in zip(cells, arrivals)))

    @property
    def n_visits(self) -> int:
        return len(self.stays)

    @property
    def cells(self) -> list[str]:
        return [s.cell for s in self.stays]

    @property
    def arrivals(self) -> list[int]:
        return [s.arrival for s in self.stays]


def check_stays(home: str, cells: list[str], arrivals: list[int]) -> None:
    """Raise :class:`InvariantError` unless the stay sequence is a valid day.

    A valid day starts at home at minute 0, never repeats a cell on
    consecutive stays, and keeps every gap (including the last stay up to
    midnight) at least ``T_MIN`` minutes long.
    """
    if not cells or len(cells) != len(arrivals):
        raise InvariantError("trajectory needs at least one stay")
    if cells[0] != home or arrivals[0] != 0:
        raise InvariantError("trajectory must start at home at minute 0")
    for m in range(1, len(cells)):
        if cells[m] == cells[m - 1]:
            raise InvariantError(f"stays {m - 1} and {m} share cell {cells[m]}")
        if arrivals[m] - arrivals[m - 1] < T_MIN:
            raise InvariantError(f"gap before stay {m} is shorter than {T_MIN} min")
    if DAY_MINUTES - arrivals[-1] < T_MIN:
        raise InvariantError("last stay starts too close to midnight")


def observations_of(cells, arrivals) -> list[tuple[str, int, int]]:
    """Dwell-travel observations of a raw stay sequence (see below)."""
    n = len(cells)
    out = []
    for m in range(n - 1):
        out.append((cells[m], arrivals[m] // 60, arrivals[m + 1] - arrivals[m]))
    out.append((cells[-1], arrivals[-1] // 60, DAY_MINUTES - arrivals[-1]))
    return out


def moves_of(cells, arrivals) -> list[tuple[str, str, int]]:
    """OD keys ``(origin, dest, arrival hour)`` of a raw stay sequence."""
    return [(cells[m - 1], cells[m], arrivals[m] // 60) for m in range(1, len(cells))]


def dwell_travel_observations(traj: Trajectory) -> list[tuple[str, int, int]]:
    """``(cell, arrival hour, T)`` for every stay of the day.

    T runs from arrival at a stay to arrival at the next one; the last stay is
    censored at midnight.
    """
    return observations_of(traj.cells, traj.arrivals)


@dataclass
class ODMatrix:
    """Sparse hourly origin-destination counts for one demographic group."""

    group: Demographic
    entries: dict[tuple[str, str, int], int] = field(default_factory=dict)

    def __post_init__(self):
        for (o, d, h), v in self.entries.items():
            if o == d:
                raise InputError(f"OD entry with origin == dest ({o})")
            if not 0 <= h < 24:
                raise InputError(f"OD hour {h} out of range")
            if not isinstance(v, int) or v <= 0:
                raise InputError(f"OD count must be a positive integer, got {v!r}")

    def total(self) -> int:
        return sum(self.entries.values())

    def cells(self) -> set[str]:
        out = set()
        for o, d, _ in self.entries:
            out.add(o)
            out.add(d)
        return out

    def suppressed(self, threshold: int) -> "ODMatrix":
        return ODMatrix(self.group, {k: v for k, v in self.entries.items() if v >= threshold})


def od_matrix_of(trajs: Iterable[Trajectory], group: Demographic) -> ODMatrix:
    """Count every stay transition under its arrival hour at the destination."""
    counts: Counter = Counter()
    for t in trajs:
        if t.demographic != group:
            raise InputError(
                f"agent {t.agent_id} is {t.demographic.label}, expected {group.label}")
        counts.update(moves_of(t.cells, t.arrivals))
    return ODMatrix(group, dict(counts))


QUANTILE_LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class QuantileRow:
    q10: float
    q30: float
    q50: float
    q70: float
    q90: float
    n: int

    def __post_init__(self):
        qs = self.quantiles
        if any(b < a for a, b in zip(qs, qs[1:])):
            raise InputError(f"quantiles not ordered: {qs}")
        if qs[0] < T_MIN:
            raise InputError(f"quantile below {T_MIN} min: {qs[0]}")

    @property
    def quantiles(self) -> tuple[float, ...]:
        return (self.q10, self.q30, self.q50, self.q70, self.q90)


@dataclass
class QuantileTable:
    rows: dict[tuple[str, int], QuantileRow] = field(default_factory=dict)
    threshold: int = 0

    def __post_init__(self):
        for key, row in self.rows.items():
            if row.n < self.threshold:
                raise InputError(f"row {key} has n={row.n} below threshold {self.threshold}")

    def __len__(self):
        return len(self.rows)


@dataclass(frozen=True)
class Weights:
    w_od: float = 1.0
    w_vf: float = 0.0
    w_dt: float = 0.0

    def __post_init__(self):
        if self.w_od <= 0 or self.w_vf < 0 or self.w_dt < 0:
            raise InputError(f"invalid weights {self}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.w_od, self.w_vf, self.w_dt)


Census = Mapping[tuple[str, Demographic], int]


def validate_cell(code: str) -> str:
    try:
        return meshgrid.validate(code)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
