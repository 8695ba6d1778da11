import csv
import json

import pytest
from pydantic import ValidationError

from src.core.errors import ContractViolation
from src.core.models import RelationLabel, VerdictLabel
from src.evaluation.ablation import (
    MIN_DOMINANT_WITNESSES,
    AblationSource,
    WitnessVote,
    committee_ablation,
    committee_outcome,
    load_pool,
    synthetic_pool,
    write_table,
)


def _votes(n, label=RelationLabel.ENTAILS):
    return [WitnessVote(paper_id=f"W{i}", influence=0.5, label=label, stability=1.0) for i in range(n)]


def test_synthetic_pool_shape():
    pool = synthetic_pool(n_sources=4, seed=3)
    assert [s.truth for s in pool] == [VerdictLabel.SUPPORTED, VerdictLabel.MISCITATION] * 2
    assert all(MIN_DOMINANT_WITNESSES <= len(s.witnesses) <= 30 for s in pool)
    assert synthetic_pool(n_sources=4, seed=3) == pool


def test_source_validation():
    with pytest.raises(ValidationError):
        AblationSource(source_id="s", truth=VerdictLabel.SUPPORTED, witnesses=_votes(24))
    with pytest.raises(ValidationError):
        AblationSource(source_id="s", truth=VerdictLabel.UNDECIDABLE, witnesses=_votes(25))


def test_committee_outcome():
    assert committee_outcome(_votes(6)).verdict.label == VerdictLabel.SUPPORTED
    assert committee_outcome(_votes(6, RelationLabel.CONTRADICTS)).verdict.label == VerdictLabel.MISCITATION
    assert committee_outcome(_votes(5)).verdict.label == VerdictLabel.UNDECIDABLE
    assert committee_outcome(_votes(5), k_min=5).verdict.label == VerdictLabel.SUPPORTED


def test_reliability_grows_with_committee_size():
    pool = synthetic_pool(n_sources=6, seed=0)
    rows = committee_ablation(pool, sizes=[1, 5, 25], trials=3, seed=0)
    assert [r.n_voter for r in rows] == [1, 5, 25]
    assert all(r.n_samples == 18 for r in rows)

    small, _, full = rows
    assert small.non_abstention_rate == 0.0
    assert small.conditional_accuracy is None
    assert full.non_abstention_rate >= 0.9
    assert full.conditional_accuracy == 1.0
    assert full.mean_conf > small.mean_conf


def test_reliability_knee_at_minimum_committee_size():
    rows = committee_ablation(synthetic_pool(n_sources=30, seed=0), sizes=[1, 2, 6], trials=200, seed=0)
    one, two, six = rows
    assert all(r.n_samples == 30 * 200 for r in rows)
    assert one.non_abstention_rate <= 0.2
    assert two.non_abstention_rate <= 0.2
    assert six.non_abstention_rate >= 0.9
    assert six.conditional_accuracy >= 0.95


def test_ablation_is_reproducible():
    pool = synthetic_pool(n_sources=2, seed=1)
    assert committee_ablation(pool, sizes=[6, 10], seed=4) == committee_ablation(pool, sizes=[6, 10], seed=4)


def test_ablation_rejects_bad_input():
    with pytest.raises(ContractViolation):
        committee_ablation([])
    with pytest.raises(ContractViolation):
        committee_ablation(synthetic_pool(n_sources=1), sizes=[26])


def test_write_table(tmp_path):
    rows = committee_ablation(synthetic_pool(n_sources=2), sizes=[1, 25], trials=1)
    payload = write_table(rows, str(tmp_path))
    assert len(payload["rows"]) == 2
    with (tmp_path / "ablation.csv").open(newline="") as fh:
        table = list(csv.DictReader(fh))
    assert table[0]["conditional_accuracy"] == ""
    assert table[1]["n_voter"] == "25"
    assert json.loads((tmp_path / "ablation.json").read_text()) == payload


def test_load_pool(tmp_path):
    path = tmp_path / "pool.json"
    pool = synthetic_pool(n_sources=2)
    path.write_text(json.dumps([s.model_dump(mode="json") for s in pool]), encoding="utf-8")
    assert load_pool(str(path)) == pool

    path.write_text(json.dumps([{"source_id": "x", "truth": "Supported", "witnesses": []}]), encoding="utf-8")
    with pytest.raises(ContractViolation):
        load_pool(str(path))
