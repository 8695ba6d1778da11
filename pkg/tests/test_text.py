import numpy as np

from src.core.embeddings import cosine, embed_texts, hashed_vector, text_cosine
from src.core.text import (
    content_tokens,
    first_sentence,
    normalize_family_name,
    normalize_text,
    normalize_title,
    strip_citations,
    title_tokens,
    token_overlap,
)
from src.parsing.segment import split_sentences


def test_normalize_title_drops_version_suffix_and_punctuation():
    assert normalize_title("Attention Is All You Need (v2)") == "attention is all you need"
    assert normalize_title("BERT: Pre-training of Deep  Bidirectional Transformers") == (
        "bert pre training of deep bidirectional transformers"
    )
    assert normalize_title("") == ""


def test_title_tokens_skip_stopwords():
    assert title_tokens("The Art of Computer Programming") == ["art", "computer", "programming"]


def test_family_names_fold_accents_and_hyphens():
    assert normalize_family_name("Müller-Lüdenscheidt") == "muller ludenscheidt"
    assert normalize_family_name("O'Brien") == "obrien"


def test_strip_citations_removes_markers():
    assert strip_citations("Transformers work well [1, 2].") == "Transformers work well."
    assert strip_citations("Gains were large (Smith, 2020; Lee, 2021).") == "Gains were large."
    assert strip_citations("Footnoted claim[^3].") == "Footnoted claim."
    assert strip_citations("Smith et al. (2020) showed gains.") == "prior work showed gains."


def test_first_sentence_and_overlap():
    assert first_sentence("One claim here. Another one.") == "One claim here."
    assert first_sentence("single") == "single"
    assert token_overlap("deep learning models", "models of deep nets") == 2 / 3
    assert token_overlap("the of", "anything") == 0.0
    assert "learning" in content_tokens("Deep learning!")


def test_normalize_text_is_case_and_punctuation_blind():
    assert normalize_text("Hello,   World!") == normalize_text("hello world")


def test_hashed_vectors_are_unit_and_deterministic():
    v = hashed_vector("self-attention everywhere")
    assert np.isclose(np.linalg.norm(v), 1.0)
    assert np.array_equal(v, hashed_vector("self-attention everywhere"))
    assert np.linalg.norm(hashed_vector("")) == 0.0
    assert len(embed_texts(["a b", "c"])[0]) == v.size


def test_cosine_bounds():
    assert text_cosine("retrieval helps", "retrieval helps") == 1.0 or np.isclose(
        text_cosine("retrieval helps", "retrieval helps"), 1.0
    )
    assert cosine([0.0, 0.0], [1.0, 0.0]) == 0.0
    assert 0.0 <= text_cosine("apples and pears", "quantum chromodynamics") < 0.5


# ---------------------------------------------------------
# sentence splitting
# ---------------------------------------------------------

def test_split_sentences_basic():
    assert split_sentences("First claim. Second claim! Third?") == ["First claim.", "Second claim!", "Third?"]
    assert split_sentences("   ") == []


def test_split_sentences_respects_abbreviations_and_initials():
    assert split_sentences("We follow Smith et al. in this. Results improve.") == [
        "We follow Smith et al. in this.",
        "Results improve.",
    ]
    assert split_sentences("See Fig. 3 for details. It works.") == ["See Fig. 3 for details.", "It works."]
    assert split_sentences("As J. Doe noted, it holds. Done.") == ["As J. Doe noted, it holds.", "Done."]
    assert split_sentences("Data from the U.S. Census was used. Done.") == [
        "Data from the U.S. Census was used.",
        "Done.",
    ]


def test_split_sentences_never_splits_inside_math():
    assert split_sentences("We set $x. Y$ here. Done.") == ["We set $x. Y$ here.", "Done."]


def test_split_sentences_keeps_closing_brackets():
    assert split_sentences("It was shown (see below.) Then more.") == ["It was shown (see below.)", "Then more."]
