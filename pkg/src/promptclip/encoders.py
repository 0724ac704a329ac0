"""Vision and text encoders.

The image side projects non-overlapping patches into d_p-dimensional
columns, lets a bank of learnable prompt vectors attend over them, and
fuses the attended prompt features into a single image vector.  The text
side runs token embeddings through one self-attention block and then,
optionally, refines them by attending over the image's patch and prompt
features before pooling into the shared latent space.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from promptclip import tensor as T
from promptclip.config import CHANNELS, RunConfig
from promptclip.errors import ShapeError

INIT_SCALE = 0.02
UNK_TOKEN = "<unk>"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text):
    """Lowercase word/number tokens; punctuation acts as a separator."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Token-to-id table with a reserved <unk> at id 0."""

    def __init__(self, tokens):
        self.tokens = [UNK_TOKEN] + [t for t in tokens if t != UNK_TOKEN]
        self._ids = {}
        for i, tok in enumerate(self.tokens):
            if tok in self._ids:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self._ids[tok] = i

    @classmethod
    def from_texts(cls, texts, max_size):
        counts = Counter()
        for text in texts:
            counts.update(tokenize(text))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([tok for tok, _ in ranked[: max_size - 1]])

    def __len__(self):
        return len(self.tokens)

    def encode(self, text, max_tokens):
        """Token ids, truncated to max_tokens; unknown tokens map to <unk>."""
        words = tokenize(text)
        if not words:
            raise ValueError(f"cannot encode empty token sequence from {text!r}")
        ids = [self._ids.get(w, 0) for w in words[:max_tokens]]
        return np.asarray(ids, dtype=np.intp)


# ---------------------------------------------------------------------------
# patch handling


def patchify(image, patch_size):
    """Split an HxWxC image into flattened non-overlapping patches.

    Patches are ordered row-major over the patch grid and each patch is
    flattened row-major, so the split is lossless.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"expected HxWxC image, got shape {img.shape}")
    h, w, c = img.shape
    if h % patch_size or w % patch_size:
        raise ShapeError(
            f"image {h}x{w} not divisible by patch size {patch_size}"
        )
    gh, gw = h // patch_size, w // patch_size
    tiles = img.reshape(gh, patch_size, gw, patch_size, c)
    tiles = tiles.transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape(gh * gw, patch_size * patch_size * c))


def unpatchify(patches, height, width, channels, patch_size):
    """Inverse of :func:`patchify`."""
    gh, gw = height // patch_size, width // patch_size
    tiles = patches.reshape(gh, gw, patch_size, patch_size, channels)
    tiles = tiles.transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape(height, width, channels))


# ---------------------------------------------------------------------------
# parameters

CANONICAL_NAMES = (
    "vision.proj", "vision.pos",
    "text.embed", "text.pos",
    "text.attn.wq", "text.attn.wk", "text.attn.wv", "text.attn.wo",
    "pgve.Q", "pgve.W1", "pgve.W2", "pgve.W3", "pgve.W4",
    "head.image", "head.text",
    "tau_log",
)


@dataclass
class ModelParams:
    """All learnable state plus the vocabulary it was built with."""

    config: RunConfig
    vocab: Vocab
    vision_proj: T.Tensor   # d_p x patch_dim
    vision_pos: T.Tensor    # d_p x n_patches
    token_embed: T.Tensor   # vocab x d_p
    token_pos: T.Tensor     # max_tokens x d_p
    attn_wq: T.Tensor       # d_p x d_p
    attn_wk: T.Tensor
    attn_wv: T.Tensor
    attn_wo: T.Tensor
    prompts: T.Tensor       # n_r x d_p
    fuse_w1: T.Tensor       # d_p x d_p
    fuse_w2: T.Tensor       # d_p x d_p
    fuse_w3: T.Tensor       # 1 x d_p
    fuse_w4: T.Tensor       # d_p x d_p
    image_head: T.Tensor    # latent_dim x d_p
    text_head: T.Tensor     # latent_dim x d_p
    tau_log: T.Tensor       # (1,)

    _BY_NAME = {
        "vision.proj": "vision_proj", "vision.pos": "vision_pos",
        "text.embed": "token_embed", "text.pos": "token_pos",
        "text.attn.wq": "attn_wq", "text.attn.wk": "attn_wk",
        "text.attn.wv": "attn_wv", "text.attn.wo": "attn_wo",
        "pgve.Q": "prompts",
        "pgve.W1": "fuse_w1", "pgve.W2": "fuse_w2",
        "pgve.W3": "fuse_w3", "pgve.W4": "fuse_w4",
        "head.image": "image_head", "head.text": "text_head",
        "tau_log": "tau_log",
    }

    @classmethod
    def init(cls, config, vocab, seed=None):
        cfg = config
        rng = np.random.default_rng(cfg.seed if seed is None else seed)

        def p(*shape):
            return T.Tensor(rng.normal(0.0, INIT_SCALE, size=shape), requires_grad=True)

        return cls(
            config=cfg,
            vocab=vocab,
            vision_proj=p(cfg.d_p, cfg.patch_dim),
            vision_pos=p(cfg.d_p, cfg.n_patches),
            token_embed=p(len(vocab), cfg.d_p),
            token_pos=p(cfg.max_tokens, cfg.d_p),
            attn_wq=p(cfg.d_p, cfg.d_p),
            attn_wk=p(cfg.d_p, cfg.d_p),
            attn_wv=p(cfg.d_p, cfg.d_p),
            attn_wo=p(cfg.d_p, cfg.d_p),
            prompts=p(cfg.n_r, cfg.d_p),
            fuse_w1=p(cfg.d_p, cfg.d_p),
            fuse_w2=p(cfg.d_p, cfg.d_p),
            fuse_w3=p(1, cfg.d_p),
            fuse_w4=p(cfg.d_p, cfg.d_p),
            image_head=p(cfg.latent_dim, cfg.d_p),
            text_head=p(cfg.latent_dim, cfg.d_p),
            tau_log=T.Tensor(np.array([math.log(cfg.tau_init)]), requires_grad=True),
        )

    def tensors(self):
        """Canonical name -> Tensor, the checkpoint wire order."""
        return {name: getattr(self, attr) for name, attr in self._BY_NAME.items()}

    def expected_shapes(self):
        return {name: t.data.shape for name, t in self.tensors().items()}

    def load_arrays(self, arrays):
        """Overwrite parameter values from {canonical name: ndarray}."""
        for name, attr in self._BY_NAME.items():
            tgt = getattr(self, attr)
            src = arrays[name]
            if src.shape != tgt.data.shape:
                raise ShapeError(
                    f"{name}: stored shape {src.shape} != expected {tgt.data.shape}"
                )
            tgt.data[...] = src

    def tau(self):
        """Positive similarity temperature, clamped for stability."""
        return T.clamp(T.exp(self.tau_log), 1e-2, 100.0)


# ---------------------------------------------------------------------------
# forward operations


def encode_patches(patches, params):
    """Project flattened patches and add positional embeddings.

    Returns the d_p x n_patches feature matrix; column j belongs to
    patch j in row-major grid order.
    """
    proj, pos = params.vision_proj, params.vision_pos
    if patches.ndim != 2 or patches.shape[1] != proj.data.shape[1]:
        raise ShapeError(
            f"patch dim {patches.shape} incompatible with projection {proj.data.shape}"
        )
    if patches.shape[0] != pos.data.shape[1]:
        raise ShapeError(
            f"patch count {patches.shape[0]} != positional slots {pos.data.shape[1]}"
        )
    return T.add(T.matmul(proj, T.Tensor(patches.T.copy())), pos)


def prompt_patch_attention(prompts, patch_feats):
    """Prompts attend over patch columns; normalized result re-adds prompts.

    prompts: n_r x d_p, patch_feats: d_p x n_patches -> n_r x d_p.
    """
    d_p = prompts.data.shape[1]
    if patch_feats.data.shape[0] != d_p:
        raise ShapeError(
            f"prompt width {d_p} != patch feature width {patch_feats.data.shape[0]}"
        )
    scores = T.scale(T.matmul(prompts, patch_feats), 1.0 / math.sqrt(d_p))
    attended = T.matmul(T.softmax_rows(scores), T.transpose(patch_feats))
    return T.add(T.layer_norm(attended), prompts)


def fuse_prompt_features(prompt_feats, w1, w2, w3, w4, return_weights=False):
    """Collapse per-prompt features into a single image vector.

    Each prompt row is linearly mapped (w1), scored through a tanh
    bottleneck (w2, w3), softmax-normalized into mixture weights, and the
    weighted sum is mapped once more (w4).  Returns a (d_p,) vector.
    """
    cols = T.matmul(w1, T.transpose(prompt_feats))        # d_p x n_r
    scores = T.matmul(w3, T.tanh(T.matmul(w2, cols)))     # 1 x n_r
    weights = T.softmax_rows(scores)
    pooled = T.matmul(cols, T.transpose(weights))         # d_p x 1
    fused = T.reshape(T.matmul(w4, pooled), (w4.data.shape[0],))
    if return_weights:
        return fused, weights
    return fused


def encode_text(token_ids, params):
    """Contextual token embeddings: lookup + position + one attention block."""
    ids = np.asarray(token_ids, dtype=np.intp)
    if ids.size == 0:
        raise ValueError("cannot encode an empty token sequence")
    if ids.size > params.config.max_tokens:
        raise ShapeError(
            f"sequence length {ids.size} exceeds max_tokens {params.config.max_tokens}"
        )
    d_p = params.config.d_p
    base = T.add(
        T.take_rows(params.token_embed, ids),
        T.take_rows(params.token_pos, np.arange(ids.size)),
    )
    q = T.matmul(base, params.attn_wq)
    k = T.matmul(base, params.attn_wk)
    v = T.matmul(base, params.attn_wv)
    attn = T.softmax_rows(T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d_p)))
    return T.add(base, T.matmul(T.matmul(attn, v), params.attn_wo))


def visual_context_refine(token_feats, patch_feats, prompt_feats=None):
    """Tokens attend over patch columns (and prompt features, when given).

    token_feats: n_tok x d_p; patch_feats: d_p x n_patches;
    prompt_feats: n_r x d_p or None.  Residual add keeps token identity.
    """
    d_p = token_feats.data.shape[1]
    if patch_feats.data.shape[0] != d_p:
        raise ShapeError(
            f"token width {d_p} != visual feature width {patch_feats.data.shape[0]}"
        )
    ctx = patch_feats
    if prompt_feats is not None:
        ctx = T.concat_cols(patch_feats, T.transpose(prompt_feats))
    scores = T.scale(T.matmul(token_feats, ctx), 1.0 / math.sqrt(d_p))
    refined = T.matmul(T.softmax_rows(scores), T.transpose(ctx))
    return T.add(token_feats, refined)


def _project(vec, head):
    out = T.matmul(head, T.reshape(vec, (vec.data.shape[0], 1)))
    return T.l2_normalize(T.reshape(out, (head.data.shape[0],)))


def project_image(fused, params):
    """Image-side linear head then unit normalization."""
    return _project(fused, params.image_head)


def pool_and_project_text(token_feats, params):
    """Mean-pool token rows, apply the text head, unit-normalize."""
    return _project(T.mean_rows(token_feats), params.text_head)


# ---------------------------------------------------------------------------
# full per-sample paths


@dataclass
class VisualFeatures:
    embedding: T.Tensor          # (latent_dim,) unit norm
    patch_feats: T.Tensor        # d_p x n_patches
    prompt_feats: T.Tensor | None  # n_r x d_p when prompt pooling is on


def image_features(params, image):
    """Full image path: patchify, encode, pool, project."""
    cfg = params.config
    patches = patchify(image, cfg.patch_size)
    patch_feats = encode_patches(patches, params)
    if cfg.use_prompt_pool:
        prompt_feats = prompt_patch_attention(params.prompts, patch_feats)
        fused = fuse_prompt_features(
            prompt_feats, params.fuse_w1, params.fuse_w2, params.fuse_w3, params.fuse_w4
        )
    else:
        prompt_feats = None
        fused = T.mean_rows(T.transpose(patch_feats))
    return VisualFeatures(
        embedding=project_image(fused, params),
        patch_feats=patch_feats,
        prompt_feats=prompt_feats,
    )


def text_features(params, token_ids, visual=None):
    """Full text path; pass the paired image's features to refine tokens."""
    token_feats = encode_text(token_ids, params)
    if params.config.use_visual_refine and visual is not None:
        token_feats = visual_context_refine(
            token_feats, visual.patch_feats, visual.prompt_feats
        )
    return pool_and_project_text(token_feats, params)
