# src/evaluation/scoring.py
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from src.core.errors import RaggedSamplesError, UndefinedResultError
from src.core.models import VerdictLabel
from src.evaluation.grader import GradedSample

SAMPLES_PER_INSTANCE = 3
DECISIVE = {VerdictLabel.SUPPORTED, VerdictLabel.MISCITATION}


def acc_pass_at_3(grades: Sequence[Sequence[GradedSample]]) -> float:
    """Share of instances with at least one CORRECT sample out of exactly three."""
    if not grades:
        return 0.0
    passed = 0
    for i, samples in enumerate(grades):
        if len(samples) != SAMPLES_PER_INSTANCE:
            raise RaggedSamplesError(i, len(samples))
        passed += any(s.correct for s in samples)
    return passed / len(grades)


def token_economy(
    full_text_tokens: Mapping[str, int],
    agent_tokens: Mapping[str, int],
    verdicts: Mapping[str, Tuple[VerdictLabel, VerdictLabel]],
) -> float:
    """
    1 - mean(agent) / mean(full text), over instances where both methods
    returned Supported or Miscitation. verdicts maps instance id to
    (full-text verdict, agent verdict).
    """
    shared = [
        k for k, (baseline, agent) in verdicts.items()
        if baseline in DECISIVE and agent in DECISIVE and k in full_text_tokens and k in agent_tokens
    ]
    if not shared:
        raise UndefinedResultError("no instance where both methods returned a decisive verdict")
    full = np.mean([full_text_tokens[k] for k in shared])
    if full == 0:
        raise UndefinedResultError("full-text baseline used no tokens on the shared instances")
    agent = np.mean([agent_tokens[k] for k in shared])
    return float(1.0 - agent / full)


def instance_verdict(labels: Sequence[VerdictLabel]) -> VerdictLabel:
    """Most frequent sample label; a tie at the top abstains."""
    counts: Dict[VerdictLabel, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    if not counts:
        return VerdictLabel.UNDECIDABLE
    top = max(counts.values())
    leaders = [label for label, n in counts.items() if n == top]
    return leaders[0] if len(leaders) == 1 else VerdictLabel.UNDECIDABLE


def average_runs(runs: List[Dict[str, float]]) -> Dict[str, float]:
    """Arithmetic mean of each metric over repeated evaluations."""
    if not runs:
        return {}
    keys = [k for k in runs[0] if all(k in r for r in runs)]
    return {k: float(np.mean([r[k] for r in runs])) for k in keys}
