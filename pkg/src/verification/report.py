# src/verification/report.py
import hashlib
import json
import re
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Sequence

from src.core.models import TaxonomyCode, VerdictLabel, VerificationResult


def verdict_counts(results: Sequence[VerificationResult]) -> Dict[str, int]:
    """
    Number of citations per verdict label.
    Output: {"Supported": 12, "Miscitation": 3, "Undecidable": 2}
    """
    counts = defaultdict(int)
    for label in VerdictLabel:
        counts[label.value] = 0
    for r in results:
        counts[r.verdict.label.value] += 1
    return dict(counts)


def taxonomy_counts(results: Sequence[VerificationResult]) -> Dict[str, int]:
    counts = defaultdict(int)
    for code in sorted(TaxonomyCode, key=lambda c: c.precedence_rank):
        counts[code.value] = 0
    for r in results:
        if r.taxonomy is not None:
            counts[r.taxonomy.code.value] += 1
    return dict(counts)


def route_counts(results: Sequence[VerificationResult]) -> Dict[str, int]:
    """Routes taken by tasks that finished; failed and unrouted tasks are left out."""
    counts = defaultdict(int)
    for r in results:
        if r.error is None and r.verdict.route is not None:
            counts[r.verdict.route.value] += 1
    return dict(sorted(counts.items()))


def integrity_summary(doc_id: str, results: Sequence[VerificationResult]) -> Dict[str, Any]:
    """
    Paper-level citation-integrity summary. Verdict tallies cover every
    bundle; failed tasks carry Undecidable and are also counted under "errors".
    """
    ok = [r for r in results if r.error is None]
    abstained = sum(1 for r in ok if r.verdict.label == VerdictLabel.UNDECIDABLE)
    usage_in = sum(r.token_usage.input_tokens for r in results)
    usage_out = sum(r.token_usage.output_tokens for r in results)
    return {
        "doc_id": doc_id,
        "citations": len(results),
        "verdicts": verdict_counts(results),
        "taxonomy": taxonomy_counts(results),
        "routes": route_counts(results),
        "mean_confidence": (sum(r.verdict.confidence for r in ok) / len(ok)) if ok else 0.0,
        "abstention_rate": (abstained / len(ok)) if ok else 0.0,
        "errors": len(results) - len(ok),
        "unrouted": sum(1 for r in ok if r.verdict.route is None),
        "token_usage": {"input_tokens": usage_in, "output_tokens": usage_out},
    }


def markdown_digest(summary: Dict[str, Any], results: Sequence[VerificationResult]) -> str:
    lines: List[str] = [
        f"# Citation integrity: {summary['doc_id']}",
        "",
        f"- citations checked: {summary['citations']}",
        f"- mean confidence: {summary['mean_confidence']:.2f}",
        f"- abstention rate: {summary['abstention_rate']:.1%}",
        f"- errors: {summary['errors']}",
        f"- not routed: {summary['unrouted']}",
        "",
        "## Verdicts",
        "",
        "| verdict | count |",
        "|---|---|",
    ]
    lines += [f"| {k} | {v} |" for k, v in summary["verdicts"].items()]
    lines += ["", "## Error types", "", "| code | count |", "|---|---|"]
    lines += [f"| {TaxonomyCode(k).display_name} | {v} |" for k, v in summary["taxonomy"].items()]
    lines += ["", "## Routes", "", "| route | count |", "|---|---|"]
    lines += [f"| {k} | {v} |" for k, v in summary["routes"].items()]

    flagged = [r for r in results if r.verdict.label == VerdictLabel.MISCITATION or r.error]
    if flagged:
        lines += ["", "## Flagged citations", ""]
        for r in flagged:
            if r.error:
                lines.append(f"- `{r.occurrence_id}` ({r.target_key}): error: {r.error}")
                continue
            code = r.taxonomy.code.display_name if r.taxonomy else "unlabelled"
            context = r.evidence.citing_context if r.evidence else ""
            lines.append(f"- `{r.occurrence_id}` ({r.target_key}, {r.verdict.route.value}): **{code}**")
            if context:
                lines.append(f"  > {context}")
            if r.taxonomy and r.taxonomy.rationale:
                lines.append(f"  {r.taxonomy.rationale}")
    return "\n".join(lines) + "\n"


def bundle_filename(occurrence_id: str) -> str:
    """Readable slug plus a digest of the exact id, so distinct ids never share a file."""
    slug = re.sub(r"[^A-Za-z0-9._-]+", "_", occurrence_id).strip("_") or "citation"
    digest = hashlib.sha1(occurrence_id.encode("utf-8")).hexdigest()[:10]
    return f"{slug}-{digest}.json"


def write_reports(out_dir: str, doc_id: str, results: Sequence[VerificationResult]) -> Dict[str, Any]:
    """bundles/<occurrence>-<digest>.json, summary.json and summary.md under out_dir/doc_id."""
    root = Path(out_dir) / doc_id
    bundles = root / "bundles"
    bundles.mkdir(parents=True, exist_ok=True)
    for r in results:
        (bundles / bundle_filename(r.occurrence_id)).write_text(
            json.dumps(r.to_bundle_json(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    summary = integrity_summary(doc_id, results)
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (root / "summary.md").write_text(markdown_digest(summary, results), encoding="utf-8")
    return summary
