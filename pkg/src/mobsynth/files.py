"""CSV and JSON file formats.

Every CSV has a mandatory header, UTF-8 encoding and LF line endings. Cell
codes are bare digit strings. Floats are written with ``repr`` so a round trip
is exact and output bytes are reproducible.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from pathlib import Path
from typing import Iterable

from .lognormal import DTParams
from .model import (
    Demographic,
    InputError,
    InvariantError,
    ODMatrix,
    QuantileRow,
    QuantileTable,
    Trajectory,
    validate_cell,
)

TRAJECTORY_HEADER = ["agent_id", "sex", "age_group", "stay_index", "cell", "arrival_minute"]
OD_HEADER = ["sex", "age_group", "origin", "dest", "hour", "count"]
QUANTILE_HEADER = ["cell", "hour", "q10", "q30", "q50", "q70", "q90", "n"]
PARAMS_HEADER = ["cell", "hour", "mu", "sigma"]
CENSUS_HEADER = ["cell", "sex", "age_group", "count"]
TRACE_HEADER = ["tau_frac", "l_od_norm", "l_vf_norm", "l_dt_norm", "l_tot"]

WORLD_FILE = "world.csv"
OD_FILE = "od.csv"
QUANTILE_FILE = "quantiles.csv"
CENSUS_FILE = "census.csv"
PARAMS_FILE = "params.csv"


class SchemaError(InputError):
    """A file does not follow its schema; the message carries ``path:line``."""


def fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header: list[str], rows: Iterable[Iterable]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    os.replace(tmp, path)


def read_csv(path, header: list[str]):
    """Yield ``(line number, row dict)`` after checking the header."""
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}:1: empty file, expected header {','.join(header)}")
        if got != header:
            raise SchemaError(f"{path}:1: header {','.join(got)!r}, expected {','.join(header)!r}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, dict(zip(header, row))


class _Row:
    """Field parsers that report ``path:line`` on failure."""

    def __init__(self, path, line, row):
        self.where = f"{path}:{line}"
        self.row = row

    def fail(self, msg):
        raise SchemaError(f"{self.where}: {msg}")

    def int(self, key, lo=None, hi=None) -> int:
        try:
            v = int(self.row[key])
        except ValueError:
            self.fail(f"{key} must be an integer, got {self.row[key]!r}")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            self.fail(f"{key}={v} out of range")
        return v

    def float(self, key) -> float:
        try:
            return float(self.row[key])
        except ValueError:
            self.fail(f"{key} must be a number, got {self.row[key]!r}")

    def cell(self, key) -> str:
        try:
            return validate_cell(self.row[key])
        except InputError as exc:
            self.fail(str(exc))

    def demographic(self) -> Demographic:
        try:
            return Demographic.parse(self.row["sex"], self.row["age_group"])
        except InputError as exc:
            self.fail(str(exc))


# --- trajectories ---------------------------------------------------------

def write_trajectories(path, trajs: Iterable[Trajectory]) -> None:
    write_csv(path, TRAJECTORY_HEADER, (
        (t.agent_id, t.demographic.sex.value, t.demographic.age_group.value, k, s.cell, s.arrival)
        for t in trajs for k, s in enumerate(t.stays)))


def read_trajectories(path) -> list[Trajectory]:
    agents: dict = {}
    first_line: dict = {}
    for line, row in read_csv(path, TRAJECTORY_HEADER):
        r = _Row(path, line, row)
        aid = r.int("agent_id", lo=0)
        demo = r.demographic()
        k = r.int("stay_index", lo=0)
        cell = r.cell("cell")
        minute = r.int("arrival_minute", lo=0, hi=1439)
        if aid not in agents:
            agents[aid] = (demo, {})
            first_line[aid] = line
        elif agents[aid][0] != demo:
            r.fail(f"agent {aid} changes demographic")
        stays = agents[aid][1]
        if k in stays:
            r.fail(f"duplicate stay_index {k} for agent {aid}")
        stays[k] = (cell, minute)
    out = []
    for aid in sorted(agents):
        demo, stays = agents[aid]
        if sorted(stays) != list(range(len(stays))):
            raise SchemaError(f"{path}:{first_line[aid]}: agent {aid} stay_index not 0..n-1")
        cells = [stays[k][0] for k in range(len(stays))]
        arrs = [stays[k][1] for k in range(len(stays))]
        try:
            out.append(Trajectory.from_lists(aid, demo, cells, arrs))
        except InvariantError as exc:
            raise SchemaError(f"{path}:{first_line[aid]}: agent {aid}: {exc}") from exc
    return out


# --- OD -------------------------------------------------------------------

def write_od(path, matrices) -> None:
    rows = []
    for g in sorted(matrices):
        for (o, d, h), v in sorted(matrices[g].entries.items()):
            rows.append((g.sex.value, g.age_group.value, o, d, h, v))
    write_csv(path, OD_HEADER, rows)


def read_od(path) -> dict:
    entries: dict = defaultdict(dict)
    for line, row in read_csv(path, OD_HEADER):
        r = _Row(path, line, row)
        g = r.demographic()
        o, d = r.cell("origin"), r.cell("dest")
        if o == d:
            r.fail("origin equals dest")
        h = r.int("hour", 0, 23)
        v = r.int("count", lo=0)
        key = (o, d, h)
        if key in entries[g]:
            r.fail(f"duplicate OD entry {key}")
        if v > 0:
            entries[g][key] = v
    return {g: ODMatrix(g, e) for g, e in sorted(entries.items())}


# --- quantiles / params / census -------------------------------------------

def write_quantiles(path, qt: QuantileTable) -> None:
    write_csv(path, QUANTILE_HEADER, (
        (c, h, r.q10, r.q30, r.q50, r.q70, r.q90, r.n) for (c, h), r in sorted(qt.rows.items())))


def read_quantiles(path) -> QuantileTable:
    rows = {}
    for line, row in read_csv(path, QUANTILE_HEADER):
        r = _Row(path, line, row)
        key = (r.cell("cell"), r.int("hour", 0, 23))
        if key in rows:
            r.fail(f"duplicate row {key}")
        n = r.int("n", lo=1)
        try:
            rows[key] = QuantileRow(*(r.float(k) for k in ("q10", "q30", "q50", "q70", "q90")),
                                    n=n)
        except InputError as exc:
            r.fail(str(exc))
    return QuantileTable(rows, 0)


def write_params(path, table) -> None:
    write_csv(path, PARAMS_HEADER, ((c, h, p.mu, p.sigma) for (c, h), p in sorted(table.items())))


def read_params(path) -> dict:
    out = {}
    for line, row in read_csv(path, PARAMS_HEADER):
        r = _Row(path, line, row)
        key = (r.cell("cell"), r.int("hour", 0, 23))
        if key in out:
            r.fail(f"duplicate row {key}")
        try:
            out[key] = DTParams(r.float("mu"), r.float("sigma"))
        except InputError as exc:
            r.fail(str(exc))
    return out


def write_census(path, census) -> None:
    rows = sorted(census.items(), key=lambda kv: (kv[0][1].sort_key(), kv[0][0]))
    write_csv(path, CENSUS_HEADER, (
        (cell, g.sex.value, g.age_group.value, n) for (cell, g), n in rows))


def read_census(path) -> dict:
    out = {}
    for line, row in read_csv(path, CENSUS_HEADER):
        r = _Row(path, line, row)
        key = (r.cell("cell"), r.demographic())
        if key in out:
            r.fail(f"duplicate census row for {key[0]} {key[1].label}")
        n = r.int("count", lo=0)
        if n:
            out[key] = n
    return out


def write_trace(path, trace) -> None:
    write_csv(path, TRACE_HEADER, (
        (r.tau_frac, r.l_od_norm, r.l_vf_norm, r.l_dt_norm, r.l_tot) for r in trace))


def write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# --- bundles ----------------------------------------------------------------

def write_bundle(directory, bundle) -> None:
    d = Path(directory)
    write_od(d / OD_FILE, bundle.od)
    write_quantiles(d / QUANTILE_FILE, bundle.quantiles)
    write_census(d / CENSUS_FILE, bundle.census)


def read_bundle(directory):
    from .worldgen import Bundle

    d = Path(directory)
    return Bundle(read_od(d / OD_FILE), read_quantiles(d / QUANTILE_FILE),
                  read_census(d / CENSUS_FILE))
