import csv

import pytest

from src.core.config import GatewaySettings
from src.core.gateway import ModelGateway
from src.parsing.bibliography import parse_bibliography, with_entries
from src.parsing.document import parse_markdown
from src.services.metadata_service import FixtureMetadataClient

ATTENTION_REF = "A. Vaswani, N. Shazeer. Attention is all you need. NeurIPS, 2017."
RAG_REF = "P. Lewis, E. Perez. Retrieval-augmented generation for knowledge-intensive tasks. NeurIPS, 2020."
GHOST_REF = "Q. Nobody. Quantum gravity in twelve dimensions. Imaginary Letters, 2031."

CITING_PAPER = f"""# Introduction

Transformers rely entirely on self-attention for sequence transduction [1]. Retrieval augmentation improves open-domain question answering [2].

Some prior results were never published [3].

# References

[1] {ATTENTION_REF}
[2] {RAG_REF}
[3] {GHOST_REF}
"""

ATTENTION_TEXT = """# Model

The Transformer relies entirely on self-attention to compute representations of its input and output. It dispenses with recurrence and convolutions entirely.

# Results

The model reaches a new state of the art on two translation benchmarks.
"""

WITNESS_CLAIMS = [
    "Retrieval augmentation improves open-domain question answering",
    "Retrieving passages before generation raises exact-match accuracy",
    "Dense retrieval gives generators access to external knowledge",
    "Augmenting generation with retrieved documents reduces hallucination",
    "Retrieval-augmented models outperform parametric-only baselines on knowledge tasks",
    "Grounding answers in retrieved evidence improves factual accuracy",
]


AMBIGUOUS_PAPER = """# Intro

Smith et al. (2020) showed something.

# References

- J. Smith, K. Walker. Scaling attention to long documents. ACL, 2020.
- J. Smith. Unrelated gardening notes. Garden Press, 2020.
"""


def witness_text(sentence: str, ref: str = RAG_REF) -> str:
    return f"# Body\n\n{sentence} [1].\n\n# References\n\n[1] {ref}\n"


def witness_records(claims=WITNESS_CLAIMS, target_id: str = "W-rag"):
    return [
        {
            "record_id": f"W-wit{i}",
            "title": f"Witness study number {i} on unrelated matters",
            "authors": [f"Author{i} Person"],
            "year": 2022,
            "open_access": True,
            "full_text": witness_text(claim),
            "cites": [target_id],
        }
        for i, claim in enumerate(claims, start=1)
    ]


def build_doc(text: str, doc_id: str = "paper"):
    doc = parse_markdown(text, doc_id)
    return with_entries(doc, parse_bibliography(doc))


@pytest.fixture
def gateway(tmp_path):
    return ModelGateway(GatewaySettings(cache_dir=str(tmp_path / "cache")))


@pytest.fixture
def stub(gateway):
    return gateway.backends["stub"]


@pytest.fixture
def records():
    return [
        {
            "record_id": "W-attn",
            "title": "Attention Is All You Need",
            "authors": ["Ashish Vaswani", "Noam Shazeer"],
            "year": 2017,
            "venue": "NeurIPS",
            "open_access": True,
            "full_text": ATTENTION_TEXT,
        },
        {
            "record_id": "W-rag",
            "title": "Retrieval-Augmented Generation for Knowledge-Intensive Tasks",
            "authors": ["Patrick Lewis", "Ethan Perez"],
            "year": 2020,
            "venue": "NeurIPS",
            "abstract": "We combine a retriever with a generator.",
        },
    ] + witness_records()


@pytest.fixture
def client(records):
    return FixtureMetadataClient(records=records)


@pytest.fixture
def citing_doc():
    return build_doc(CITING_PAPER)


@pytest.fixture
def cited_doc():
    return parse_markdown(ATTENTION_TEXT, "cited:ref1")


BENCH_ROW = {
    "Miscitation": "The method triples accuracy on every benchmark [1].",
    "Explanation": "The source reports a 4% gain on two benchmarks, not a tripling everywhere.",
    "Correct Statement": "The method improves accuracy by 4% on two benchmarks [1].",
    "Original Text": "The method improves accuracy by 4% on two benchmarks.",
    "Miscite Type": "Scope Extrapolation",
    "Difficulties": "surface",
}


def write_benchmark(path, rows, columns=None):
    columns = list(columns or BENCH_ROW)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in columns})
    return str(path)
