# src/evaluation/ablation.py
"""
Committee-reliability ablation: how non-abstention, conditional accuracy and
confidence grow with the number of witnesses voting on the dominant aspect.

Each pool source carries a planted truth and a dominant aspect backed by at
least 25 witnesses. For each committee size n, n of those witnesses are
drawn without replacement and the consensus/calibration stage is rerun on
their votes.
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, field_validator

from src.core.errors import ContractViolation
from src.core.models import AspectCluster, ClusterRelation, RelationLabel, VerdictLabel
from src.verification.icsv.consensus import (
    K_MIN,
    aggregate_consensus,
    assign_credibility,
    calibrate_confidence,
)

MIN_DOMINANT_WITNESSES = 25
TABLE_COLUMNS = ("n_voter", "non_abstention_rate", "conditional_accuracy", "mean_conf", "n_samples")


class WitnessVote(BaseModel):
    paper_id: str
    influence: float = Field(ge=0.0, le=1.0)
    label: RelationLabel
    stability: float = Field(ge=0.0, le=1.0)


class AblationSource(BaseModel):
    source_id: str
    truth: VerdictLabel
    witnesses: List[WitnessVote]

    @field_validator("truth")
    @classmethod
    def _decisive(cls, v: VerdictLabel) -> VerdictLabel:
        if v == VerdictLabel.UNDECIDABLE:
            raise ValueError("planted truth must be Supported or Miscitation")
        return v

    @field_validator("witnesses")
    @classmethod
    def _enough(cls, v: List[WitnessVote]) -> List[WitnessVote]:
        if len({w.paper_id for w in v}) < MIN_DOMINANT_WITNESSES:
            raise ValueError(f"dominant aspect needs at least {MIN_DOMINANT_WITNESSES} distinct witnesses")
        return v


class AblationRow(BaseModel):
    n_voter: int
    non_abstention_rate: float
    conditional_accuracy: Optional[float] = None
    mean_conf: float
    n_samples: int


# ---------------------------------------------------------
# POOL
# ---------------------------------------------------------

def synthetic_pool(
    n_sources: int = 30,
    seed: int = 0,
    min_witnesses: int = 25,
    max_witnesses: int = 30,
    neutral_rate: float = 0.01,
    unstable_rate: float = 0.1,
) -> List[AblationSource]:
    """
    Coherent committees: every witness votes with the planted truth except a
    small share of NEUTRAL votes; a share of relations is only 2/3 stable.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pool = []
    for s in range(n_sources):
        truth = VerdictLabel.SUPPORTED if s % 2 == 0 else VerdictLabel.MISCITATION
        agree = RelationLabel.ENTAILS if truth == VerdictLabel.SUPPORTED else RelationLabel.CONTRADICTS
        size = int(rng.integers(min_witnesses, max_witnesses + 1))
        witnesses = []
        for w in range(size):
            label = RelationLabel.NEUTRAL if rng.random() < neutral_rate else agree
            stability = 2 / 3 if rng.random() < unstable_rate else 1.0
            witnesses.append(WitnessVote(
                paper_id=f"S{s}-W{w}", influence=float(rng.uniform(0.4, 0.9)), label=label, stability=stability,
            ))
        pool.append(AblationSource(source_id=f"S{s}", truth=truth, witnesses=witnesses))
    return pool


def load_pool(path: str) -> List[AblationSource]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return [AblationSource.model_validate(item) for item in data]
    except ValueError as e:
        raise ContractViolation(f"{path}: {e}") from e


# ---------------------------------------------------------
# TRIALS
# ---------------------------------------------------------

def committee_outcome(votes: Sequence[WitnessVote], k_min: int = K_MIN):
    """One aspect cluster per sampled witness claim, then the usual consensus + calibration."""
    clusters = [
        AspectCluster(cluster_id=f"C{i}", claim_ids=[f"{w.paper_id}#1"], source_papers=[w.paper_id])
        for i, w in enumerate(votes, start=1)
    ]
    clusters = assign_credibility(clusters, {w.paper_id: w.influence for w in votes})
    relations = [
        ClusterRelation(cluster_id=c.cluster_id, label=w.label, stability=w.stability)
        for c, w in zip(clusters, votes)
    ]
    v_final, _ = aggregate_consensus(clusters, relations)
    return calibrate_confidence(clusters, relations, v_final, len(votes), k_min=k_min)


def committee_ablation(
    pool: Sequence[AblationSource],
    sizes: Sequence[int] = tuple(range(1, MIN_DOMINANT_WITNESSES + 1)),
    trials: int = 7,
    seed: int = 0,
    k_min: int = K_MIN,
) -> List[AblationRow]:
    if not pool:
        raise ContractViolation("ablation pool is empty")
    if any(n < 1 or n > MIN_DOMINANT_WITNESSES for n in sizes):
        raise ContractViolation(f"subsample sizes must lie in 1..{MIN_DOMINANT_WITNESSES}")

    rows = []
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    for n, child in zip(sizes, children):
        rng = np.random.default_rng(child)
        decided = correct = 0
        confs: List[float] = []
        samples = 0
        for source in pool:
            for _ in range(trials):
                picked = rng.choice(len(source.witnesses), size=n, replace=False)
                outcome = committee_outcome([source.witnesses[i] for i in sorted(picked)], k_min=k_min)
                samples += 1
                confs.append(outcome.conf)
                label = outcome.verdict.label
                if label != VerdictLabel.UNDECIDABLE:
                    decided += 1
                    correct += label == source.truth
        rows.append(AblationRow(
            n_voter=n,
            non_abstention_rate=decided / samples,
            conditional_accuracy=(correct / decided) if decided else None,
            mean_conf=float(np.mean(confs)),
            n_samples=samples,
        ))
        logger.bind(stage="ablate").debug("n_voter={} non-abstention={:.3f}", n, decided / samples)
    return rows


def write_table(rows: Sequence[AblationRow], out_dir: str, stem: str = "ablation") -> Dict[str, Any]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / f"{stem}.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(TABLE_COLUMNS))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in r.model_dump().items()})
    payload = {"rows": [r.model_dump() for r in rows]}
    (out / f"{stem}.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return payload
