"""Hierarchical grid-cell codes.

A cell code is a string of decimal digits. Dropping the last digit yields the
enclosing cell one level up, so the digit prefixes of a code enumerate all of
its containing cells. Eleven digits is the finest (125 m) level.
"""

from __future__ import annotations

MAX_LEVELS = 11


def validate(code: str) -> str:
    if not isinstance(code, str) or not code or not code.isdigit() or not code.isascii():
        raise ValueError(f"invalid cell code {code!r}")
    if len(code) > MAX_LEVELS:
        raise ValueError(f"cell code {code!r} longer than {MAX_LEVELS} digits")
    return code


def parent(code: str) -> str:
    """Return the enclosing cell one level coarser (last digit masked)."""
    validate(code)
    if len(code) < 2:
        raise ValueError(f"no coarser level for cell code {code!r}")
    return code[:-1]


def ancestors(code: str) -> list[str]:
    """All enclosing cells, finest first. Empty for a root code."""
    validate(code)
    return [code[:k] for k in range(len(code) - 1, 0, -1)]


def synth_code(x: int, y: int, levels: int) -> str:
    """Quadtree code for cell (x, y) on a 2**levels square grid.

    Each digit packs one bit of x and one of y (``digit = xbit + 2*ybit``),
    most significant first, so ``parent(synth_code(x, y, L)) ==
    synth_code(x // 2, y // 2, L - 1)``.
    """
    if not 1 <= levels <= MAX_LEVELS:
        raise ValueError(f"levels must be in 1..{MAX_LEVELS}, got {levels}")
    side = 1 << levels
    if not (0 <= x < side and 0 <= y < side):
        raise ValueError(f"({x}, {y}) outside a {side}x{side} grid")
    return "".join(
        str(((x >> b) & 1) + 2 * ((y >> b) & 1)) for b in range(levels - 1, -1, -1)
    )


def synth_xy(code: str) -> tuple[int, int]:
    """Inverse of :func:`synth_code` for quadtree codes (digits 0..3)."""
    validate(code)
    x = y = 0
    for ch in code:
        d = int(ch)
        if d > 3:
            raise ValueError(f"{code!r} is not a quadtree code")
        x = (x << 1) | (d & 1)
        y = (y << 1) | (d >> 1)
    return x, y


def grid_cells(levels: int) -> list[str]:
    """Every finest-level quadtree code of a 2**levels grid, row-major in (y, x)."""
    side = 1 << levels
    return [synth_code(x, y, levels) for y in range(side) for x in range(side)]
