# src/verification/icsv/influence.py
"""
Field-normalised influence of a witness paper.

    C_norm  percentile of the (winsorised) citation count within field × year
    V_norm  Journal     impact-factor percentile within field
            Conference  venue metric, else 2-year venue citation rate, else long-run rate
            Preprint    repository citation-rate percentile × 0.85
    I = 0.6 · C_norm + 0.4 · V_norm

Reference distributions come from a CSV table:

    table,field_id,year,values
    citations,cs.CL,2021,0;1;3;8;20;55
    impact_factor,cs.CL,,1.2;2.5;4.0
    venue_metric,cs.CL,,...
    venue_rate_2y,cs.CL,,...
    venue_rate_all,cs.CL,,...
    repository_rate,cs.CL,,...

A missing distribution falls back to the empirical CDF over the current
witness pool and is flagged.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.core.errors import ContractViolation
from src.core.models import VenueType, WitnessPaper

W_CITATION = 0.6
W_VENUE = 0.4
RHO_PREPRINT = 0.85
WINSOR_PERCENTILE = 99

TABLES = ("citations", "impact_factor", "venue_metric", "venue_rate_2y", "venue_rate_all", "repository_rate")


@dataclass(frozen=True)
class Influence:
    influence: float
    c_norm: float
    v_norm: float
    fallback: bool = False


def percentile_rank(value: float, distribution: Sequence[float]) -> float:
    """Share of the distribution at or below value."""
    dist = np.asarray(distribution, dtype=float)
    if dist.size == 0:
        return 0.0
    return float(np.mean(dist <= value))


def winsorized_rank(value: float, distribution: Sequence[float], pct: float = WINSOR_PERCENTILE) -> float:
    dist = np.asarray(distribution, dtype=float)
    if dist.size == 0:
        return 0.0
    cap = float(np.percentile(dist, pct))
    return percentile_rank(min(value, cap), np.minimum(dist, cap))


def combine(c_norm: float, v_norm: float) -> float:
    return W_CITATION * c_norm + W_VENUE * v_norm


class ReferenceStats:
    def __init__(self, rows: Optional[Dict[Tuple[str, str, Optional[int]], List[float]]] = None):
        self._rows = rows or {}

    def __len__(self) -> int:
        return len(self._rows)

    @classmethod
    def from_csv(cls, path: str) -> "ReferenceStats":
        rows: Dict[Tuple[str, str, Optional[int]], List[float]] = {}
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for n, rec in enumerate(csv.DictReader(fh), start=2):
                table = (rec.get("table") or "").strip()
                if table not in TABLES:
                    raise ContractViolation(f"{path}:{n}: unknown table {table!r}")
                year = (rec.get("year") or "").strip()
                values = [float(v) for v in (rec.get("values") or "").split(";") if v.strip()]
                rows[(table, (rec.get("field_id") or "").strip(), int(year) if year else None)] = values
        logger.info("loaded {} reference distributions from {}", len(rows), path)
        return cls(rows)

    def get(self, table: str, field_id: str, year: Optional[int] = None) -> Optional[List[float]]:
        return self._rows.get((table, field_id, year))


def _pool(witnesses: Sequence[WitnessPaper], attr: str) -> List[float]:
    if attr == "citation_count":
        return [float(w.citation_count) for w in witnesses]
    return [float(getattr(w.metadata, attr)) for w in witnesses if getattr(w.metadata, attr) is not None]


def _metric_rank(
    value: Optional[float], table: str, paper: WitnessPaper, stats: ReferenceStats, pool: Sequence[WitnessPaper]
) -> Tuple[Optional[float], bool]:
    if value is None:
        return None, False
    dist = stats.get(table, paper.field_id)
    if dist:
        return percentile_rank(value, dist), False
    return percentile_rank(value, _pool(pool, table)), True


def venue_norm(paper: WitnessPaper, stats: ReferenceStats, pool: Sequence[WitnessPaper]) -> Tuple[float, bool]:
    meta = paper.metadata
    if paper.venue_type == VenueType.JOURNAL:
        rank, fb = _metric_rank(meta.impact_factor, "impact_factor", paper, stats, pool)
        return rank or 0.0, fb
    if paper.venue_type == VenueType.CONFERENCE:
        for value, table in (
            (meta.venue_metric, "venue_metric"),
            (meta.venue_rate_2y, "venue_rate_2y"),
            (meta.venue_rate_all, "venue_rate_all"),
        ):
            rank, fb = _metric_rank(value, table, paper, stats, pool)
            if rank is not None:
                return rank, fb
        return 0.0, False
    rank, fb = _metric_rank(meta.repository_rate, "repository_rate", paper, stats, pool)
    return RHO_PREPRINT * (rank or 0.0), fb


def influence_score(
    paper: WitnessPaper, stats: ReferenceStats, pool: Optional[Sequence[WitnessPaper]] = None
) -> Influence:
    pool = pool if pool is not None else [paper]
    fallback = False
    dist = stats.get("citations", paper.field_id, paper.year)
    if not dist:
        dist = _pool(pool, "citation_count")
        fallback = True
    c_norm = winsorized_rank(float(paper.citation_count), dist)
    v_norm, v_fallback = venue_norm(paper, stats, pool)
    fallback = fallback or v_fallback
    if fallback:
        logger.bind(stage="icsv").debug("influence of {} uses the witness-pool fallback", paper.paper_id)
    return Influence(influence=combine(c_norm, v_norm), c_norm=c_norm, v_norm=v_norm, fallback=fallback)


def influence_table(witnesses: Sequence[WitnessPaper], stats: ReferenceStats) -> Dict[str, Influence]:
    out: Dict[str, Influence] = {}
    for w in witnesses:
        out[w.paper_id] = influence_score(w, stats, witnesses)
    return out
