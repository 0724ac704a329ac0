"""Shared orchestration between the CLI commands and the test harness."""

from __future__ import annotations

import numpy as np

from promptclip import tensor as T
from promptclip.alignment import PreparedDataset, TrainSample
from promptclip.cleaning import clean_record
from promptclip.data import load_image, load_manifest, resolve_image_path
from promptclip.encoders import ModelParams, Vocab, image_features, text_features
from promptclip.errors import ManifestError


def build_vocab(records, cfg):
    """Deterministic vocabulary over every text field the manifest carries."""
    texts = []
    for rec in records:
        texts.append(rec["caption_gt"])
        texts.extend(rec.get("captions_gen", []))
        if rec.get("caption_enriched"):
            texts.append(rec["caption_enriched"])
    return Vocab.from_texts(texts, cfg.vocab_size)


def training_text(rec):
    text = rec.get("caption_enriched")
    if not text:
        raise ManifestError(
            f"record {rec['id']!r} lacks caption_enriched; run clean-captions first"
        )
    return text


def prepare_training_set(manifest_path, cfg, records=None):
    """Decode images and tokenize enriched captions for the trainer."""
    if records is None:
        records = load_manifest(manifest_path)
    vocab = build_vocab(records, cfg)
    samples = []
    for rec in records:
        img = load_image(resolve_image_path(manifest_path, rec), side=cfg.image_side)
        ids = vocab.encode(training_text(rec), cfg.max_tokens)
        samples.append(TrainSample(rec["id"], img, ids))
    return PreparedDataset(samples, vocab)


def image_embedding(params, img):
    """Unit image embedding as a plain array; tape is left clean."""
    vec = image_features(params, img).embedding.data.copy()
    T.reset_graph()
    return vec


def pair_embeddings(params, manifest_path, records=None, text_field=None):
    """Embed every record's image and caption; returns (N, latent) arrays.

    Captions go through the training-time text path, refined by their
    paired image's visual features when the model has refinement on.
    """
    if records is None:
        records = load_manifest(manifest_path)
    img_rows, txt_rows = [], []
    for rec in records:
        img = load_image(resolve_image_path(manifest_path, rec), side=params.config.image_side)
        text = rec.get(text_field) if text_field else None
        if text is None:
            text = rec.get("caption_enriched") or rec["caption_gt"]
        T.reset_graph()
        vis = image_features(params, img)
        ids = params.vocab.encode(text, params.config.max_tokens)
        txt = text_features(params, ids, vis)
        img_rows.append(vis.embedding.data.copy())
        txt_rows.append(txt.data.copy())
        T.reset_graph()
    return np.stack(img_rows), np.stack(txt_rows)


def clean_manifest_records(params, manifest_path, records, top_p):
    """Add keywords_kept / caption_enriched to every record."""
    cleaned = []
    for rec in records:
        img = load_image(resolve_image_path(manifest_path, rec), side=params.config.image_side)
        emb = image_embedding(params, img)
        out = clean_record(params, rec, emb, top_p)
        out["cleaning_model"] = params_version_tag(params)
        cleaned.append(out)
    return cleaned


def params_version_tag(params):
    """Identifies which model scored a cleaning pass."""
    return f"seed-{params.config.seed}-dp{params.config.d_p}-lat{params.config.latent_dim}"


def init_cleaning_model(records, cfg):
    """Freshly initialized model over the manifest's own vocabulary."""
    return ModelParams.init(cfg, build_vocab(records, cfg))
