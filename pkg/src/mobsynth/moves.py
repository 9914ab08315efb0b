"""Trajectory edit moves used by the annealer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .model import InvariantError, check_stays

KINDS = ("relocate", "insert", "remove", "retime")


class InvalidMove(ValueError):
    pass


@dataclass(frozen=True)
class Move:
    kind: str
    agent: int = -1
    index: int = 0
    cell: Optional[str] = None
    minute: Optional[int] = None

    @property
    def is_null(self) -> bool:
        return self.kind == "null"


NULL_MOVE = Move("null")


def apply_move(cells: list, arrivals: list, move: Move) -> tuple[list, list]:
    """Return new ``(cells, arrivals)`` with ``move`` applied; inputs untouched.

    Stay 0 (home at midnight) is immutable. Raises :class:`InvalidMove` if the
    result would break a trajectory invariant.
    """
    m = move.index
    n = len(cells)
    kind = move.kind
    if kind == "null":
        return list(cells), list(arrivals)
    if kind == "insert":
        if not 1 <= m <= n or move.cell is None or move.minute is None:
            raise InvalidMove(f"bad insert {move}")
        new_c = cells[:m] + [move.cell] + cells[m:]
        new_t = arrivals[:m] + [int(move.minute)] + arrivals[m:]
    else:
        if not 1 <= m < n:
            raise InvalidMove(f"{kind} needs a non-home stay index, got {m} of {n}")
        if kind == "relocate":
            if move.cell is None:
                raise InvalidMove("relocate without a cell")
            new_c = list(cells)
            new_c[m] = move.cell
            new_t = list(arrivals)
        elif kind == "remove":
            new_c = cells[:m] + cells[m + 1:]
            new_t = arrivals[:m] + arrivals[m + 1:]
        elif kind == "retime":
            if move.minute is None:
                raise InvalidMove("retime without a minute")
            new_c = list(cells)
            new_t = list(arrivals)
            new_t[m] = int(move.minute)
        else:
            raise InvalidMove(f"unknown move kind {kind!r}")
    try:
        check_stays(cells[0], new_c, new_t)
    except InvariantError as exc:
        raise InvalidMove(f"{move}: {exc}") from exc
    return new_c, new_t
