import asyncio

import pytest

from src.core.errors import BenchmarkSchemaError, RaggedSamplesError, UndefinedResultError
from src.core.models import TaxonomyCode, VerdictLabel
from src.evaluation.benchmark import REQUIRED_COLUMNS, Difficulty, load_benchmark, source_text
from src.evaluation.grader import Grade, GradedSample, Prediction, grade_sample, numeric_precheck, parse_grade
from src.evaluation.runner import evaluate, parse_baseline_reply
from src.evaluation.scoring import acc_pass_at_3, average_runs, instance_verdict, token_economy

from conftest import BENCH_ROW, write_benchmark

S, M, U = VerdictLabel.SUPPORTED, VerdictLabel.MISCITATION, VerdictLabel.UNDECIDABLE


def _graded(*flags):
    return [GradedSample(label=M, grade=Grade.CORRECT if f else Grade.INCORRECT) for f in flags]


# ---------------------------------------------------------
# benchmark
# ---------------------------------------------------------

def test_load_benchmark(tmp_path):
    [inst] = load_benchmark(write_benchmark(tmp_path / "bench.csv", [BENCH_ROW]))
    assert inst.instance_id == "bench-1"
    assert inst.miscite_type == TaxonomyCode.SCOPE
    assert inst.difficulty == Difficulty.SURFACE
    assert inst.gold_label == M
    assert inst.context == BENCH_ROW["Miscitation"]


def test_missing_columns_are_rejected(tmp_path):
    path = write_benchmark(tmp_path / "bench.csv", [BENCH_ROW], columns=REQUIRED_COLUMNS[:-1])
    with pytest.raises(BenchmarkSchemaError, match="Difficulties"):
        load_benchmark(path)


def test_malformed_rows_are_reported_by_number(tmp_path):
    rows = [BENCH_ROW, dict(BENCH_ROW, **{"Miscite Type": "Typo Error"}), dict(BENCH_ROW, Explanation="  ")]
    with pytest.raises(BenchmarkSchemaError) as err:
        load_benchmark(write_benchmark(tmp_path / "bench.csv", rows))
    assert err.value.rows == [3, 4]


def test_source_text_prefers_the_full_paper(tmp_path):
    row = dict(BENCH_ROW, **{"Source ID": "paper42"})
    [inst] = load_benchmark(write_benchmark(tmp_path / "bench.csv", [row], columns=REQUIRED_COLUMNS + ("Source ID",)))
    assert source_text(inst) == BENCH_ROW["Original Text"]
    (tmp_path / "paper42.md").write_text("# Full\n\nEverything.\n", encoding="utf-8")
    assert source_text(inst, str(tmp_path)).startswith("# Full")


# ---------------------------------------------------------
# grader
# ---------------------------------------------------------

@pytest.fixture
def instance(tmp_path):
    return load_benchmark(write_benchmark(tmp_path / "bench.csv", [BENCH_ROW]))[0]


def test_label_mismatch_is_incorrect_without_a_call(gateway, instance):
    graded = asyncio.run(grade_sample(instance, Prediction(label=S, explanation=BENCH_ROW["Explanation"]), gateway))
    assert graded.grade == Grade.INCORRECT
    assert len(gateway.ledger) == 0


def test_equivalent_explanation_is_correct(gateway, instance):
    graded = asyncio.run(grade_sample(instance, Prediction(label=M, explanation=BENCH_ROW["Explanation"]), gateway))
    assert graded.correct


def test_unparseable_grader_is_retried_then_incorrect(gateway, stub, instance):
    stub.add_rule({"tag": "grader/*", "responses": ["it depends"]})
    graded = asyncio.run(grade_sample(instance, Prediction(label=M, explanation="x"), gateway))
    assert graded.grade == Grade.INCORRECT
    assert len([r for r in gateway.ledger.rows() if r.call_tag == "grader/equivalence"]) == 2


def test_numeric_precheck_short_circuits(gateway, instance):
    wrong = Prediction(label=M, explanation="The source reports a 9% gain.")
    graded = asyncio.run(grade_sample(instance, wrong, gateway, numeric_check=True))
    assert graded.grade == Grade.INCORRECT
    assert len(gateway.ledger) == 0


def test_numeric_precheck():
    assert numeric_precheck("gain of 4.5 points", "about 4.52 points") is True
    assert numeric_precheck("gain of 4.5 points", "gain of 5 points") is False
    assert numeric_precheck("1,200 samples", "1200 samples") is True
    assert numeric_precheck("no numbers here", "12") is None


def test_parse_grade():
    assert parse_grade("correct.") == Grade.CORRECT
    assert parse_grade("`INCORRECT`") == Grade.INCORRECT
    assert parse_grade("CORRECT, mostly") is None


# ---------------------------------------------------------
# scoring
# ---------------------------------------------------------

def test_acc_pass_at_3():
    assert acc_pass_at_3([_graded(0, 0, 1), _graded(0, 0, 0)]) == 0.5
    assert acc_pass_at_3([]) == 0.0
    with pytest.raises(RaggedSamplesError) as err:
        acc_pass_at_3([_graded(1, 1, 1), _graded(1, 1)])
    assert (err.value.instance_index, err.value.count) == (1, 2)


def test_token_economy_over_shared_decisive_instances():
    verdicts = {"a": (M, M), "b": (S, U), "c": (M, S)}
    full = {"a": 1000, "b": 10, "c": 3000}
    agent = {"a": 100, "b": 99999, "c": 300}
    assert token_economy(full, agent, verdicts) == pytest.approx(0.9)


def test_token_economy_undefined():
    with pytest.raises(UndefinedResultError):
        token_economy({"a": 10}, {"a": 1}, {"a": (U, M)})
    with pytest.raises(UndefinedResultError):
        token_economy({"a": 0}, {"a": 1}, {"a": (M, M)})


def test_instance_verdict_and_average():
    assert instance_verdict([M, M, S]) == M
    assert instance_verdict([M, S, U]) == U
    assert instance_verdict([]) == U
    assert average_runs([{"x": 1.0, "y": 2.0}, {"x": 3.0}]) == {"x": 2.0}


# ---------------------------------------------------------
# runner
# ---------------------------------------------------------

def test_parse_baseline_reply():
    p = parse_baseline_reply("LABEL: MISCITATION\nEXPLANATION: The paper reports 4%,\nnot triple.")
    assert p.label == M
    assert p.explanation == "The paper reports 4%,\nnot triple."
    assert parse_baseline_reply("no idea").label == U


def test_evaluate_both_methods(gateway, stub, instance):
    stub.add_rule({"kind": "nli", "premise_contains": "improves accuracy by 4%", "distribution": [0.01, 0.04, 0.95]})
    stub.add_rule({"tag": "baseline/*", "responses": ["LABEL: MISCITATION\nEXPLANATION: Overstated gain."]})
    stub.add_rule({"tag": "grader/*", "responses": ["CORRECT"]})

    metrics = asyncio.run(evaluate([instance], gateway))
    assert metrics["n_instances"] == 1.0
    assert metrics["agent_acc_pass_at_3"] == 1.0
    assert metrics["baseline_acc_pass_at_3"] == 1.0
    assert metrics["agent_tokens"] > 0
    assert metrics["baseline_tokens"] > 0
    assert "token_economy" in metrics


def test_evaluate_without_decisive_overlap_omits_token_economy(gateway, instance):
    metrics = asyncio.run(evaluate([instance], gateway))
    # default stub: agent abstains, baseline says Supported
    assert metrics["agent_acc_pass_at_3"] == 0.0
    assert metrics["baseline_acc_pass_at_3"] == 0.0
    assert "token_economy" not in metrics
