"""Keyword-level cleaning of machine-generated captions.

Generated descriptions are broken into content keywords, each keyword is
scored by cosine similarity between its text embedding and the image
embedding, and only the best-scoring fraction survives.  Survivors are
appended to the trusted ground-truth caption to form the enriched
training text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from promptclip import tensor as T
from promptclip.encoders import encode_text, pool_and_project_text, tokenize


def _load_stopwords():
    text = resources.files("promptclip").joinpath("stopwords.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


STOPWORDS = _load_stopwords()


def extract_keywords(raw_text):
    """Lowercased content words: punctuation stripped, stopwords dropped,
    duplicates removed keeping first occurrence."""
    seen = set()
    out = []
    for tok in tokenize(raw_text):
        if tok in STOPWORDS or tok in seen:
            continue
        seen.add(tok)
        out.append(tok)
    return out


@dataclass
class CleanedKeywords:
    kept: list[tuple[str, float]]  # (keyword, similarity), descending score
    p: float
    empty_input: bool = False      # no keywords to rank; warning, not an error

    def words(self):
        return [w for w, _ in self.kept]


def retention_count(k, p):
    """ceil(p% of k), at least 1 whenever any keyword exists."""
    if k == 0:
        return 0
    return max(1, math.ceil(p / 100.0 * k))


def keyword_embedding(params, keyword):
    """Text-path embedding of a bare keyword (no visual refinement)."""
    ids = params.vocab.encode(keyword, params.config.max_tokens)
    return pool_and_project_text(encode_text(ids, params), params).data.copy()


def rank_and_retain(image_embedding, keywords, p, params):
    """Score keywords against the image and keep the top p percent.

    image_embedding: unit-norm (latent,) array.  Sorting is stable on the
    original keyword order, so equal scores keep their first-seen rank.
    Returns CleanedKeywords; an empty keyword list is flagged, not raised.
    """
    keywords = list(keywords)
    if not keywords:
        return CleanedKeywords(kept=[], p=p, empty_input=True)
    img = np.asarray(image_embedding, dtype=np.float64)
    scores = []
    for kw in keywords:
        emb = keyword_embedding(params, kw)
        scores.append(float(np.dot(img, emb)))
    order = sorted(range(len(keywords)), key=lambda i: (-scores[i], i))
    keep = retention_count(len(keywords), p)
    kept = [(keywords[i], scores[i]) for i in order[:keep]]
    T.reset_graph()
    return CleanedKeywords(kept=kept, p=p)


def enrich(caption_gt, cleaned):
    """Ground truth first, then kept keywords in rank order."""
    if not caption_gt:
        raise ValueError("ground-truth caption is mandatory and must be non-empty")
    words = cleaned.words()
    if not words:
        return caption_gt
    return caption_gt + " " + " ".join(words)


def clean_record(params, record, image_embedding, p):
    """Return a copy of the manifest record with cleaning fields added."""
    keywords = []
    for desc in record.get("captions_gen", []):
        keywords.extend(extract_keywords(desc))
    # dedupe across descriptions, first occurrence wins
    seen = set()
    merged = [k for k in keywords if not (k in seen or seen.add(k))]
    cleaned = rank_and_retain(image_embedding, merged, p, params)
    out = dict(record)
    out["keywords_kept"] = cleaned.words()
    out["caption_enriched"] = enrich(record["caption_gt"], cleaned)
    return out
