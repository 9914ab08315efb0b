"""Loss reports and the error tolerances used to judge them."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

AGGREGATION_DAYS = 20
# Daily OD fluctuations are of the order of the mean (~100% relative error);
# averaging over the aggregation days shrinks that by sqrt(days).
OD_TOLERANCE = 0.10


def fluctuation_bound(days: int = AGGREGATION_DAYS) -> float:
    """Relative OD error expected from day-to-day noise alone: ``1 / sqrt(days)``."""
    if days < 1:
        raise ValueError("days must be positive")
    return 1.0 / math.sqrt(days)


@dataclass
class LossReport:
    group: str
    w_od: float
    w_vf: float
    w_dt: float
    l_od: float
    l_od_eval: float
    l_vf: float
    l_dt: float
    l_od0: float
    l_vf0: float
    l_dt0: float
    groups: list = field(default_factory=list)

    @classmethod
    def build(cls, group: str, w, raw: Sequence[float], l_od_eval: float,
              norms: Sequence[float]) -> "LossReport":
        return cls(group, w.w_od, w.w_vf, w.w_dt, raw[0], l_od_eval, raw[1], raw[2],
                   norms[0], norms[1], norms[2])

    @property
    def normalized(self) -> tuple[float, float, float]:
        return (self.l_od / self.l_od0, self.l_vf / self.l_vf0, self.l_dt / self.l_dt0)

    @property
    def l_tot(self) -> float:
        n = self.normalized
        return self.w_od * n[0] + self.w_vf * n[1] + self.w_dt * n[2]

    @property
    def sqrt_od_eval(self) -> float:
        return math.sqrt(self.l_od_eval)

    @classmethod
    def pooled(cls, reports: Sequence["LossReport"]) -> "LossReport":
        """Average of per-group reports, the way results are shown across groups."""
        if not reports:
            raise ValueError("no reports to pool")
        k = len(reports)

        def mean(attr):
            return math.fsum(getattr(r, attr) for r in reports) / k

        first = reports[0]
        out = cls("pooled", first.w_od, first.w_vf, first.w_dt,
                  mean("l_od"), mean("l_od_eval"), mean("l_vf"), mean("l_dt"),
                  mean("l_od0"), mean("l_vf0"), mean("l_dt0"))
        out.groups = list(reports)
        return out

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "groups"}
        d["weights"] = {"w_od": self.w_od, "w_vf": self.w_vf, "w_dt": self.w_dt}
        for k in ("w_od", "w_vf", "w_dt"):
            del d[k]
        d["raw"] = {"l_od": d.pop("l_od"), "l_od_eval": d.pop("l_od_eval"),
                    "l_vf": d.pop("l_vf"), "l_dt": d.pop("l_dt")}
        d["initial"] = {"l_od0": d.pop("l_od0"), "l_vf0": d.pop("l_vf0"),
                        "l_dt0": d.pop("l_dt0")}
        nod, nvf, ndt = self.normalized
        d["normalized"] = {"l_od": nod, "l_vf": nvf, "l_dt": ndt, "l_tot": self.l_tot}
        d["sqrt_od_eval"] = self.sqrt_od_eval
        d["od_tolerance"] = OD_TOLERANCE
        d["fluctuation_bound"] = fluctuation_bound()
        d["groups"] = [g.to_dict() for g in self.groups]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary_lines(self) -> list[str]:
        nod, nvf, ndt = self.normalized
        return [
            f"group            {self.group}",
            f"weights          ({self.w_od:g}, {self.w_vf:g}, {self.w_dt:g})",
            f"L_OD             {self.l_od:.6g}  (normalized {nod:.4g})",
            f"L_OD eval        {self.l_od_eval:.6g}  sqrt {self.sqrt_od_eval:.2%}",
            f"L_VF             {self.l_vf:.6g}  (normalized {nvf:.4g})",
            f"L_DT             {self.l_dt:.6g} min  (normalized {ndt:.4g})",
            f"L_tot            {self.l_tot:.6g}",
            f"OD tolerance     {OD_TOLERANCE:.2%} relative error",
            f"fluctuation bound 1/sqrt({AGGREGATION_DAYS}) = {fluctuation_bound():.4f}",
        ]
