import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.core.models import (
    AbstentionTrigger,
    AspectCluster,
    ClusterRelation,
    CommitteeVerdict,
    MetadataSnapshot,
    RelationLabel,
    VenueType,
    VerdictLabel,
    WitnessPaper,
)
from src.verification.icsv.consensus import (
    CONF_MIN,
    EPS,
    H_MAX,
    K_MIN,
    T_SUPPORT,
    abstained,
    aggregate_consensus,
    assign_credibility,
    calibrate_confidence,
    consensus_label,
    dominant_voters,
    label_mass,
    normalized_entropy,
)
from src.verification.icsv.influence import (
    RHO_PREPRINT,
    ReferenceStats,
    combine,
    influence_score,
    influence_table,
    percentile_rank,
    winsorized_rank,
)

LABELS = [RelationLabel.ENTAILS, RelationLabel.NEUTRAL, RelationLabel.CONTRADICTS]
FLIP = {RelationLabel.ENTAILS: RelationLabel.CONTRADICTS, RelationLabel.CONTRADICTS: RelationLabel.ENTAILS,
        RelationLabel.NEUTRAL: RelationLabel.NEUTRAL}


def _clusters(papers_per_cluster):
    return [
        AspectCluster(cluster_id=f"C{j}", claim_ids=[f"c{j}"], source_papers=papers)
        for j, papers in enumerate(papers_per_cluster, start=1)
    ]


def _relations(labels, stabilities=None):
    stabilities = stabilities or [1.0] * len(labels)
    return [ClusterRelation(cluster_id=f"C{j}", label=l, stability=a)
            for j, (l, a) in enumerate(zip(labels, stabilities), start=1)]


def _random_case(rng):
    m = int(rng.integers(1, 9))
    n_papers = int(rng.integers(1, 12))
    papers = [f"P{i}" for i in range(n_papers)]
    clusters = _clusters([list(rng.choice(papers, size=int(rng.integers(1, n_papers + 1)), replace=False))
                          for _ in range(m)])
    influences = {p: float(rng.uniform(0.0, 1.0)) for p in papers}
    if rng.random() < 0.05:
        influences = {p: 0.0 for p in papers}
    labels = [LABELS[int(i)] for i in rng.integers(0, 3, size=m)]
    stabilities = [float(rng.choice([1 / 3, 2 / 3, 1.0])) for _ in range(m)]
    return clusters, influences, labels, stabilities


# ---------------------------------------------------------
# credibility / aggregation properties
# ---------------------------------------------------------

def test_gamma_is_a_distribution_and_vote_is_bounded():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        clusters, influences, labels, stabilities = _random_case(rng)
        weighted = assign_credibility(clusters, influences)
        assert math.fsum(c.gamma for c in weighted) == pytest.approx(1.0, abs=1e-9)
        assert all(0.0 <= c.gamma <= 1.0 for c in weighted)

        v, label = aggregate_consensus(weighted, _relations(labels, stabilities))
        assert -1.0 - 1e-12 <= v <= 1.0 + 1e-12
        assert label == consensus_label(v)

        flipped, _ = aggregate_consensus(weighted, _relations([FLIP[l] for l in labels], stabilities))
        assert flipped == pytest.approx(-v, abs=1e-12)


def test_rescaling_influence_changes_nothing():
    rng = np.random.default_rng(11)
    for _ in range(300):
        clusters, influences, labels, _ = _random_case(rng)
        scale = float(rng.uniform(0.1, 50.0))
        a = assign_credibility(clusters, influences)
        b = assign_credibility(clusters, {p: w * scale for p, w in influences.items()})
        assert [c.gamma for c in a] == pytest.approx([c.gamma for c in b], abs=1e-12)


def test_zero_support_falls_back_to_uniform():
    weighted = assign_credibility(_clusters([["P1"], ["P2"], ["P3"], ["P4"]]), {"P1": 0.0, "P2": 0.0})
    assert [c.gamma for c in weighted] == [0.25] * 4


def test_paper_counts_once_per_cluster():
    weighted = assign_credibility(_clusters([["P1", "P1", "P2"], ["P2"]]), {"P1": 0.6, "P2": 0.2})
    assert weighted[0].support == pytest.approx(0.8)
    assert weighted[0].gamma == pytest.approx(0.8)


def test_relations_must_pair_with_clusters():
    weighted = assign_credibility(_clusters([["P1"], ["P2"]]), {"P1": 1.0, "P2": 1.0})
    with pytest.raises(ValueError):
        aggregate_consensus(weighted, _relations([RelationLabel.ENTAILS]))


def test_consensus_label_threshold_is_strict():
    assert consensus_label(T_SUPPORT) == VerdictLabel.UNDECIDABLE
    assert consensus_label(-T_SUPPORT) == VerdictLabel.UNDECIDABLE
    assert consensus_label(0.31) == VerdictLabel.SUPPORTED
    assert consensus_label(-0.31) == VerdictLabel.MISCITATION


# ---------------------------------------------------------
# calibration against a direct computation
# ---------------------------------------------------------

def _expected(gammas, labels, stabilities, size):
    g = np.asarray(gammas)
    votes = np.asarray([l.vote for l in labels], dtype=float)
    v = float(np.sum(g * votes))
    n_eff = float(1.0 / np.sum(g ** 2))
    w = np.asarray([g[[l == target for l in labels]].sum() for target in LABELS])
    h = float(np.clip(-np.sum(w * np.log(w + EPS)) / np.log(3), 0.0, 1.0))
    a_bar = float(np.sum(g * np.asarray(stabilities)))
    conf = abs(v) * min(1.0, n_eff / K_MIN) * (1.0 - h) * a_bar
    triggers = []
    if size < K_MIN:
        triggers.append(AbstentionTrigger.INSUFFICIENT_WITNESSES)
    if -T_SUPPORT <= v <= T_SUPPORT:
        triggers.append(AbstentionTrigger.LOW_MARGIN)
    if conf < CONF_MIN:
        triggers.append(AbstentionTrigger.LOW_CONFIDENCE)
    if h > H_MAX:
        triggers.append(AbstentionTrigger.HIGH_DISAGREEMENT)
    return v, n_eff, h, a_bar, conf, triggers


def test_calibration_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(500):
        clusters, influences, labels, stabilities = _random_case(rng)
        weighted = assign_credibility(clusters, influences)
        relations = _relations(labels, stabilities)
        size = int(rng.integers(0, 15))
        v, _ = aggregate_consensus(weighted, relations)
        got = calibrate_confidence(weighted, relations, v, size)

        ev, n_eff, h, a_bar, conf, triggers = _expected([c.gamma for c in weighted], labels, stabilities, size)
        assert got.v_final == pytest.approx(ev, abs=1e-9)
        assert got.n_eff == pytest.approx(n_eff, rel=1e-9)
        assert got.entropy == pytest.approx(h, abs=1e-9)
        assert got.a_bar == pytest.approx(a_bar, abs=1e-9)
        assert got.conf == pytest.approx(conf, abs=1e-9)
        assert 1.0 <= got.n_eff <= len(clusters) + 1e-9
        assert 0.0 <= got.entropy <= 1.0
        if not any(abs(x - y) < 1e-9 for x, y in ((abs(ev), T_SUPPORT), (conf, CONF_MIN), (h, H_MAX))):
            assert got.abstention_triggers == triggers
        if got.abstention_triggers:
            assert got.verdict.label == VerdictLabel.UNDECIDABLE
        else:
            assert got.verdict.label == consensus_label(ev)


def _uniform(labels, stabilities=None):
    clusters = assign_credibility(_clusters([[f"P{j}"] for j in range(len(labels))]),
                                  {f"P{j}": 1.0 for j in range(len(labels))})
    return clusters, _relations(labels, stabilities)


@pytest.mark.parametrize(
    "labels, stabilities, size, expected",
    [
        ([RelationLabel.ENTAILS] * 6, None, 6, []),
        ([RelationLabel.ENTAILS] * 6, None, 5, [AbstentionTrigger.INSUFFICIENT_WITNESSES]),
        ([RelationLabel.CONTRADICTS] * 6, None, 6, []),
        ([RelationLabel.NEUTRAL] * 6, None, 6, [AbstentionTrigger.LOW_MARGIN, AbstentionTrigger.LOW_CONFIDENCE]),
        ([RelationLabel.ENTAILS] * 6, [1 / 3] * 6, 6, [AbstentionTrigger.LOW_CONFIDENCE]),
        ([RelationLabel.ENTAILS] * 2, None, 6, [AbstentionTrigger.LOW_CONFIDENCE]),
        (
            [RelationLabel.ENTAILS] * 2 + [RelationLabel.NEUTRAL] * 2 + [RelationLabel.CONTRADICTS] * 2, None, 6,
            [AbstentionTrigger.LOW_MARGIN, AbstentionTrigger.LOW_CONFIDENCE, AbstentionTrigger.HIGH_DISAGREEMENT],
        ),
        (
            [RelationLabel.ENTAILS] * 4 + [RelationLabel.NEUTRAL, RelationLabel.CONTRADICTS], None, 6,
            [AbstentionTrigger.LOW_CONFIDENCE, AbstentionTrigger.HIGH_DISAGREEMENT],
        ),
    ],
)
def test_abstention_boundaries(labels, stabilities, size, expected):
    clusters, relations = _uniform(labels, stabilities)
    v, _ = aggregate_consensus(clusters, relations)
    got = calibrate_confidence(clusters, relations, v, size)
    assert got.abstention_triggers == expected
    if not expected:
        assert got.verdict.label in (VerdictLabel.SUPPORTED, VerdictLabel.MISCITATION)
        assert got.conf == pytest.approx(1.0)


def test_label_mass_and_entropy():
    clusters, relations = _uniform([RelationLabel.ENTAILS, RelationLabel.NEUTRAL, RelationLabel.CONTRADICTS])
    mass = label_mass(clusters, relations)
    assert mass == pytest.approx({"ENTAILS": 1 / 3, "NEUTRAL": 1 / 3, "CONTRADICTS": 1 / 3})
    assert normalized_entropy(mass) == pytest.approx(1.0, abs=1e-9)
    assert normalized_entropy({"ENTAILS": 1.0, "NEUTRAL": 0.0, "CONTRADICTS": 0.0}) == pytest.approx(0.0, abs=1e-9)


def test_abstained_verdict_is_degenerate():
    got = abstained(0, AbstentionTrigger.INSUFFICIENT_WITNESSES)
    assert (got.n_eff, got.conf, got.v_final) == (1.0, 0.0, 0.0)
    assert got.verdict.label == VerdictLabel.UNDECIDABLE
    with pytest.raises(ValidationError):
        CommitteeVerdict.model_validate(got.model_dump() | {"n_eff": 0.0})


def test_dominant_voters():
    weighted = assign_credibility(_clusters([["P1", "P2", "P3"], ["P4"]]), {"P1": 1, "P2": 1, "P3": 1, "P4": 1})
    assert dominant_voters(weighted) == 3
    assert dominant_voters([]) == 0


# ---------------------------------------------------------
# influence
# ---------------------------------------------------------

def _paper(pid="P", venue=VenueType.JOURNAL, citations=0, field="cs.CL", year=2021, **meta):
    return WitnessPaper(
        paper_id=pid, metadata=MetadataSnapshot(title=pid, **meta), venue_type=venue,
        citation_count=citations, field_id=field, year=year,
    )


def test_percentile_rank():
    assert percentile_rank(3, [1, 2, 3, 4]) == 0.75
    assert percentile_rank(0, [1, 2]) == 0.0
    assert percentile_rank(5, []) == 0.0


def test_winsorising_caps_outliers():
    dist = list(range(100)) + [10_000]
    assert winsorized_rank(10_000, dist) == 1.0
    assert winsorized_rank(50, dist) == pytest.approx(51 / 101)


def test_journal_influence_from_reference_tables():
    stats = ReferenceStats({
        ("citations", "cs.CL", 2021): [0, 1, 3, 8, 20],
        ("impact_factor", "cs.CL", None): [1.0, 2.0, 3.0, 4.0],
    })
    inf = influence_score(_paper(citations=8, impact_factor=3.0), stats)
    assert inf.c_norm == pytest.approx(0.8)
    assert inf.v_norm == pytest.approx(0.75)
    assert inf.influence == pytest.approx(combine(0.8, 0.75))
    assert not inf.fallback


def test_conference_uses_first_available_metric():
    stats = ReferenceStats({
        ("citations", "cs.CL", 2021): [0, 10],
        ("venue_rate_2y", "cs.CL", None): [1.0, 2.0, 3.0, 4.0],
    })
    inf = influence_score(_paper(venue=VenueType.CONFERENCE, citations=10, venue_rate_2y=2.0), stats)
    assert inf.v_norm == pytest.approx(0.5)
    assert inf.c_norm == 1.0


def test_preprint_is_discounted():
    stats = ReferenceStats({
        ("citations", "cs.CL", 2021): [0, 10],
        ("repository_rate", "cs.CL", None): [1.0, 2.0],
    })
    inf = influence_score(_paper(venue=VenueType.PREPRINT, citations=0, repository_rate=5.0), stats)
    assert inf.v_norm == pytest.approx(RHO_PREPRINT)
    assert inf.c_norm == pytest.approx(0.5)


def test_missing_tables_use_the_witness_pool():
    pool = [_paper("A", citations=1), _paper("B", citations=5), _paper("C", citations=9)]
    table = influence_table(pool, ReferenceStats())
    assert table["B"].c_norm == pytest.approx(2 / 3)
    assert all(t.fallback for t in table.values())
    assert table["C"].influence == pytest.approx(0.6)


def test_reference_stats_csv(tmp_path):
    path = tmp_path / "stats.csv"
    path.write_text(
        "table,field_id,year,values\n"
        "citations,cs.CL,2021,0;1;3\n"
        "impact_factor,cs.CL,,1.5;2.5\n",
        encoding="utf-8",
    )
    stats = ReferenceStats.from_csv(str(path))
    assert len(stats) == 2
    assert stats.get("citations", "cs.CL", 2021) == [0.0, 1.0, 3.0]
    assert stats.get("impact_factor", "cs.CL") == [1.5, 2.5]


def test_reference_stats_rejects_unknown_tables(tmp_path):
    from src.core.errors import ContractViolation

    path = tmp_path / "stats.csv"
    path.write_text("table,field_id,year,values\nmystery,cs.CL,,1\n", encoding="utf-8")
    with pytest.raises(ContractViolation):
        ReferenceStats.from_csv(str(path))
