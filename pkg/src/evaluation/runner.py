# src/evaluation/runner.py
"""
Benchmark runs for the agent (full-text funnel + taxonomy rationale) and the
full-text baseline (whole cited paper in one prompt), three samples each.
"""

import asyncio
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from loguru import logger

from src.core.embeddings import text_cosine
from src.core.errors import UndefinedResultError
from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import AccessibilityVerdict, CitationEdge, CitationStyle, Route, VerdictLabel
from src.core.prompts import load_prompt
from src.evaluation.benchmark import BenchmarkInstance, source_text
from src.evaluation.grader import GradedSample, Prediction, grade_sample
from src.evaluation.scoring import SAMPLES_PER_INSTANCE, acc_pass_at_3, instance_verdict, token_economy
from src.parsing.document import parse_markdown
from src.verification.acsv import FunnelConfig, verify_accessible
from src.verification.taxonomy import LabelerConfig, assign_error_code

BASELINE_TEMPERATURE = 0.2
_LABEL = re.compile(r"^\W*label\W*:\s*(\w+)", re.I | re.M)
_EXPLANATION = re.compile(r"^\W*explanation\W*:\s*(.+)", re.I | re.M | re.S)


@dataclass
class MethodRun:
    """Per-instance samples and logical token totals of one method."""
    samples: Dict[str, List[Prediction]] = field(default_factory=dict)
    tokens: Dict[str, int] = field(default_factory=dict)

    def verdicts(self) -> Dict[str, VerdictLabel]:
        return {k: instance_verdict([p.label for p in v]) for k, v in self.samples.items()}


# ---------------------------------------------------------
# AGENT
# ---------------------------------------------------------

def _citing_sentence(doc, instance: BenchmarkInstance) -> int:
    best, best_score = 0, -1.0
    for s in doc.sentences:
        score = text_cosine(s.text, instance.miscitation_text)
        if score > best_score:
            best, best_score = s.index, score
    return best


def agent_explanation(result) -> str:
    text = result.taxonomy.rationale if result.taxonomy is not None else ""
    windows = result.evidence.accessible_evidence if result.evidence else None
    if windows:
        text = f"{text} The source states: {windows[0].text}".strip()
    return text


async def agent_predictions(
    instance: BenchmarkInstance,
    gateway: ModelGateway,
    sources_dir: Optional[str] = None,
    funnel: Optional[FunnelConfig] = None,
    labeler: Optional[LabelerConfig] = None,
    base_seed: int = 0,
) -> Tuple[List[Prediction], int]:
    citing = parse_markdown(instance.context, doc_id=instance.instance_id)
    full_text = source_text(instance, sources_dir)
    cited = parse_markdown(full_text, doc_id=f"{instance.instance_id}:source")
    edge = CitationEdge(
        occurrence_id=f"{instance.instance_id}#cite",
        sentence_index=_citing_sentence(citing, instance),
        surface_text="",
        style=CitationStyle.NUMERIC,
        target_keys=["source"],
    )
    access = AccessibilityVerdict(route=Route.ACCESSIBLE, full_text=full_text, via="benchmark")
    predictions: List[Prediction] = []
    with gateway.scope(f"agent:{instance.instance_id}") as meter:
        for j in range(SAMPLES_PER_INSTANCE):
            seed = base_seed + j
            result = await verify_accessible(edge, cited, citing, gateway, config=funnel, seed=seed, target_key="source")
            if result.verdict.label == VerdictLabel.MISCITATION:
                decision = await assign_error_code(result.evidence, access, gateway, config=labeler, seed=seed)
                result = result.model_copy(update={"taxonomy": decision})
            predictions.append(Prediction(label=result.verdict.label, explanation=agent_explanation(result)))
        used = meter.usage().total
    return predictions, used


# ---------------------------------------------------------
# FULL-TEXT BASELINE
# ---------------------------------------------------------

def parse_baseline_reply(reply: str) -> Prediction:
    m = _LABEL.search(reply or "")
    label = VerdictLabel.try_parse(m.group(1)) if m else None
    e = _EXPLANATION.search(reply or "")
    return Prediction(label=label or VerdictLabel.UNDECIDABLE, explanation=(e.group(1).strip() if e else ""))


async def baseline_predictions(
    instance: BenchmarkInstance,
    gateway: ModelGateway,
    sources_dir: Optional[str] = None,
    base_seed: int = 0,
) -> Tuple[List[Prediction], int]:
    prompt = load_prompt("full_text_baseline")
    system, user = prompt.render(citing_context=instance.context, full_text=source_text(instance, sources_dir))
    req = CompletionRequest(
        system_text=system,
        user_text=user,
        decoding=DecodingConfig(
            temperature=BASELINE_TEMPERATURE, sample_count=SAMPLES_PER_INSTANCE, seed=base_seed,
        ),
        call_tag="baseline/full-text",
    )
    with gateway.scope(f"baseline:{instance.instance_id}") as meter:
        replies = await gateway.complete(req)
        used = meter.usage().total
    return [parse_baseline_reply(text) for text, _ in replies], used


# ---------------------------------------------------------
# EVALUATION
# ---------------------------------------------------------

async def run_method(
    instances: List[BenchmarkInstance],
    gateway: ModelGateway,
    method: str,
    sources_dir: Optional[str] = None,
    funnel: Optional[FunnelConfig] = None,
    labeler: Optional[LabelerConfig] = None,
    base_seed: int = 0,
) -> MethodRun:
    async def one(inst: BenchmarkInstance):
        if method == "agent":
            return await agent_predictions(inst, gateway, sources_dir, funnel, labeler, base_seed)
        return await baseline_predictions(inst, gateway, sources_dir, base_seed)

    outcomes = await asyncio.gather(*(asyncio.ensure_future(one(i)) for i in instances))
    run = MethodRun()
    for inst, (preds, used) in zip(instances, outcomes):
        run.samples[inst.instance_id] = preds
        run.tokens[inst.instance_id] = used
    return run


async def grade_run(
    instances: List[BenchmarkInstance], run: MethodRun, gateway: ModelGateway, numeric_check: bool = False
) -> List[List[GradedSample]]:
    async def one(inst: BenchmarkInstance) -> List[GradedSample]:
        return list(await asyncio.gather(
            *(grade_sample(inst, p, gateway, numeric_check=numeric_check) for p in run.samples[inst.instance_id])
        ))

    return list(await asyncio.gather(*(one(i) for i in instances)))


async def evaluate(
    instances: List[BenchmarkInstance],
    gateway: ModelGateway,
    sources_dir: Optional[str] = None,
    funnel: Optional[FunnelConfig] = None,
    labeler: Optional[LabelerConfig] = None,
    base_seed: int = 0,
    numeric_check: bool = False,
) -> Dict[str, float]:
    """Acc-pass@3 for both methods and the agent's Token Economy over the baseline."""
    agent = await run_method(instances, gateway, "agent", sources_dir, funnel, labeler, base_seed)
    baseline = await run_method(instances, gateway, "baseline", sources_dir, base_seed=base_seed)
    metrics = {
        "n_instances": float(len(instances)),
        "agent_acc_pass_at_3": acc_pass_at_3(await grade_run(instances, agent, gateway, numeric_check)),
        "baseline_acc_pass_at_3": acc_pass_at_3(await grade_run(instances, baseline, gateway, numeric_check)),
        "agent_tokens": float(sum(agent.tokens.values())),
        "baseline_tokens": float(sum(baseline.tokens.values())),
    }
    a_verdicts, b_verdicts = agent.verdicts(), baseline.verdicts()
    pairs = {k: (b_verdicts[k], a_verdicts[k]) for k in a_verdicts if k in b_verdicts}
    try:
        metrics["token_economy"] = token_economy(baseline.tokens, agent.tokens, pairs)
    except UndefinedResultError as e:
        logger.bind(stage="eval").warning("token economy undefined: {}", e)
    return metrics
