# src/evaluation/grader.py
"""
Model-graded correctness of one (label, explanation) sample.

A label mismatch is INCORRECT without asking the grader. A matching label
goes to the grader prompt, which must answer with a single CORRECT /
INCORRECT token.
"""

import re
from enum import Enum
from typing import List, Optional

from loguru import logger
from pydantic import BaseModel

from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import VerdictLabel
from src.core.prompts import load_prompt
from src.evaluation.benchmark import BenchmarkInstance

NUMERIC_TOLERANCE = 0.01
_NUMBER = re.compile(r"-?\d+(?:,\d{3})*(?:\.\d+)?")


class Grade(str, Enum):
    CORRECT = "CORRECT"
    INCORRECT = "INCORRECT"


class Prediction(BaseModel):
    label: VerdictLabel
    explanation: str = ""


class GradedSample(BaseModel):
    label: VerdictLabel
    explanation: str = ""
    grade: Grade

    @property
    def correct(self) -> bool:
        return self.grade == Grade.CORRECT


def within_tolerance(reply: float, answer: float, tol: float = NUMERIC_TOLERANCE) -> bool:
    return abs(reply - answer) / max(1.0, abs(answer)) < tol


def numbers_in(text: str) -> List[float]:
    return [float(m.replace(",", "")) for m in _NUMBER.findall(text or "")]


def numeric_precheck(gold: str, predicted: str, tol: float = NUMERIC_TOLERANCE) -> Optional[bool]:
    """
    None when the gold explanation carries no numbers. Otherwise whether every
    gold number is matched by some predicted number within tolerance.
    """
    expected = numbers_in(gold)
    if not expected:
        return None
    got = numbers_in(predicted)
    return all(any(within_tolerance(g, a, tol) for g in got) for a in expected)


def parse_grade(reply: str) -> Optional[Grade]:
    token = (reply or "").strip().strip(".`*\"'").upper()
    if token in Grade.__members__:
        return Grade[token]
    return None


async def grade_sample(
    gold: BenchmarkInstance,
    prediction: Prediction,
    gateway: ModelGateway,
    numeric_check: bool = False,
) -> GradedSample:
    def graded(grade: Grade) -> GradedSample:
        return GradedSample(label=prediction.label, explanation=prediction.explanation, grade=grade)

    if prediction.label != gold.gold_label:
        return graded(Grade.INCORRECT)
    if numeric_check and numeric_precheck(gold.explanation, prediction.explanation) is False:
        return graded(Grade.INCORRECT)

    prompt = load_prompt("grader")
    system, user = prompt.render(
        CITING_TEXT=gold.context,
        GOLD_LABEL=gold.gold_label.value.upper(),
        GOLD_EXPLANATION=gold.explanation,
        PRED_LABEL=prediction.label.value.upper(),
        PRED_EXPLANATION=prediction.explanation,
    )
    context = {"gold_explanation": gold.explanation, "pred_explanation": prediction.explanation}
    for attempt in range(2):
        req = CompletionRequest(
            system_text=system, user_text=user, decoding=DecodingConfig(temperature=0.0, seed=attempt),
            call_tag="grader/equivalence", context=context,
        )
        [(reply, _)] = await gateway.complete(req)
        grade = parse_grade(reply)
        if grade is not None:
            return graded(grade)
        logger.bind(stage="eval", instance=gold.instance_id).warning("grader reply {!r} is not a grade", reply[:40])
    return graded(Grade.INCORRECT)
