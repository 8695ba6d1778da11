import hashlib
from typing import List, Sequence

import numpy as np

# Offline stand-in for a sentence embedding model: hashed bag of character
# trigrams, L2-normalised. Deterministic across runs and processes.
HASH_DIM = 256
NGRAM = 3


def char_ngrams(text: str, n: int = NGRAM) -> List[str]:
    grams: List[str] = []
    for word in text.lower().split():
        word = "".join(ch for ch in word if ch.isalnum())
        if not word:
            continue
        padded = f" {word} "
        if len(padded) <= n:
            grams.append(padded)
            continue
        grams.extend(padded[i:i + n] for i in range(len(padded) - n + 1))
    return grams


def _bucket(gram: str, dim: int) -> int:
    digest = hashlib.sha1(gram.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") % dim


def hashed_vector(text: str, dim: int = HASH_DIM) -> np.ndarray:
    vec = np.zeros(dim, dtype=np.float64)
    for gram in char_ngrams(text):
        vec[_bucket(gram, dim)] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def embed_texts(texts: Sequence[str], dim: int = HASH_DIM) -> List[List[float]]:
    """Convert a list of texts into fixed-dimension unit vectors."""
    return [hashed_vector(t, dim).tolist() for t in texts]


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(va, vb) / (na * nb))


def text_cosine(a: str, b: str) -> float:
    return cosine(hashed_vector(a), hashed_vector(b))
