"""Verilog source to pooled code representation.

Two embedding providers share one interface: a remote HTTP service (one
embedding row per token, disk-cached by content hash) and a deterministic
local fallback that maps each token to a vector seeded by the hash of its
text. Adaptive pooling compresses the per-token rows to a fixed number of
segment means.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass

import numpy as np

ENDPOINT_ENV = "MGVGA_EMBED_ENDPOINT"
TOKEN_ENV = "MGVGA_EMBED_TOKEN"

DEFAULT_LOCAL_DIM = 256
LOCAL_MODEL_ID = "token-hash-v1"


class EmbedError(Exception):
    pass


class EmbedTransportError(EmbedError):
    """Network-level failure talking to the embedding service."""


class EmbedProtocolError(EmbedError):
    """Service reachable but the response is unusable."""


@dataclass
class TokenEmbeddings:
    matrix: np.ndarray  # (T, d_v)
    provider: str
    model: str
    tokens: tuple = ()

    @property
    def num_tokens(self):
        return self.matrix.shape[0]

    @property
    def dim(self):
        return self.matrix.shape[1]


@dataclass
class VerilogRep:
    matrix: np.ndarray  # (M, d_v)

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def dim(self):
        return self.matrix.shape[1]


# Longest-match first: multi-character operators, identifiers, based and
# plain numeric literals, then any other single non-space character.
_TOKEN_RE = re.compile(
    r"[A-Za-z_$][A-Za-z0-9_$]*"
    r"|\d+'[bBdDhHoO][0-9a-fA-FxzXZ_?]+"
    r"|\d+"
    r"|<<<|>>>|<<|>>|<=|>=|===|!==|==|!=|&&|\|\||->|\+:|-:"
    r"|[^\sA-Za-z0-9_$]")

_COMMENT_RE = re.compile(r"//[^\n]*|/\*.*?\*/", re.DOTALL)


def tokenize(source: str) -> list:
    """Split on identifier/operator boundaries; comments and whitespace are
    dropped, based literals like 4'b0101 stay single tokens."""
    return _TOKEN_RE.findall(_COMMENT_RE.sub(" ", source))


_token_vector_cache = {}


def _token_vector(token: str, d_v: int) -> np.ndarray:
    key = (token, d_v)
    vec = _token_vector_cache.get(key)
    if vec is None:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        vec = rng.uniform(-1.0, 1.0, size=d_v).astype(np.float32)
        _token_vector_cache[key] = vec
    return vec


def embed_local(source: str, d_v: int = DEFAULT_LOCAL_DIM) -> TokenEmbeddings:
    """Content-deterministic offline embedder: one hashed vector per token."""
    tokens = tokenize(source)
    if tokens:
        matrix = np.stack([_token_vector(t, d_v) for t in tokens])
    else:
        matrix = np.zeros((0, d_v), dtype=np.float32)
    return TokenEmbeddings(matrix=matrix, provider="local",
                           model=LOCAL_MODEL_ID, tokens=tuple(tokens))


@dataclass
class EmbedConfig:
    endpoint: str
    model: str = "default"
    auth_token: str | None = None
    cache_dir: str | None = None
    timeout: float = 30.0

    @classmethod
    def from_env(cls, endpoint=None, model="default", cache_dir=None,
                 timeout=30.0):
        resolved = endpoint or os.environ.get(ENDPOINT_ENV)
        if not resolved:
            raise EmbedError(
                f"no embedding endpoint configured (flag or {ENDPOINT_ENV})")
        return cls(endpoint=resolved, model=model,
                   auth_token=os.environ.get(TOKEN_ENV),
                   cache_dir=cache_dir, timeout=timeout)


def _cache_path(config: EmbedConfig, source: str) -> str | None:
    if not config.cache_dir:
        return None
    digest = hashlib.sha256(
        config.model.encode("utf-8") + b"\0" + source.encode("utf-8")).hexdigest()
    return os.path.join(config.cache_dir, f"{digest}.json")


def embed_remote(source: str, config: EmbedConfig) -> TokenEmbeddings:
    """Fetch per-token embeddings over HTTP; cache hits bypass the network."""
    import requests

    if not source:
        raise EmbedProtocolError("refusing to embed empty source")
    path = _cache_path(config, source)
    if path and os.path.exists(path):
        with open(path) as fh:
            payload = json.load(fh)
        matrix = np.asarray(payload["embeddings"], dtype=np.float32)
        return TokenEmbeddings(matrix=matrix, provider="cache",
                               model=payload.get("model", config.model))

    headers = {}
    if config.auth_token:
        headers["Authorization"] = f"Bearer {config.auth_token}"
    try:
        resp = requests.post(f"{config.endpoint.rstrip('/')}/embed",
                             json={"model": config.model, "input": source},
                             headers=headers, timeout=config.timeout)
    except requests.RequestException as e:
        raise EmbedTransportError(f"embedding request failed: {e}") from e
    if resp.status_code != 200:
        raise EmbedProtocolError(
            f"embedding service returned {resp.status_code}: {resp.text[:200]}")
    try:
        rows = resp.json()["embeddings"]
    except (ValueError, KeyError) as e:
        raise EmbedProtocolError(f"malformed embedding payload: {e}") from e
    if not rows:
        raise EmbedProtocolError("embedding service returned zero tokens")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise EmbedProtocolError(f"ragged embedding rows: widths {sorted(widths)}")
    matrix = np.asarray(rows, dtype=np.float32)

    if path:
        os.makedirs(config.cache_dir, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=config.cache_dir, suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump({"model": config.model, "embeddings": matrix.tolist()}, fh)
        os.replace(tmp, path)
    return TokenEmbeddings(matrix=matrix, provider="remote", model=config.model)


def adaptive_pool(embeddings, m: int) -> VerilogRep:
    """Pool T token rows into M segment means; segment i covers rows
    [floor(i*T/M), ceil((i+1)*T/M)), so segments are nonempty and cover all
    tokens (adjacent segments may share a boundary row when M does not
    divide T)."""
    matrix = embeddings.matrix if isinstance(embeddings, TokenEmbeddings) \
        else np.asarray(embeddings)
    t = matrix.shape[0]
    if t < 1:
        raise EmbedError("adaptive_pool needs at least one token row")
    if m < 1:
        raise EmbedError("adaptive_pool needs at least one output row")
    out = np.empty((m, matrix.shape[1]), dtype=matrix.dtype)
    for i in range(m):
        start = (i * t) // m
        end = -((-(i + 1) * t) // m)
        out[i] = matrix[start:end].mean(axis=0)
    return VerilogRep(matrix=out)


def code_representation(source: str, m: int, d_v: int = DEFAULT_LOCAL_DIM,
                        remote: EmbedConfig | None = None) -> VerilogRep:
    """Tokenize, embed (remote when configured, local otherwise), and pool."""
    if remote is not None:
        tok = embed_remote(source, remote)
    else:
        tok = embed_local(source, d_v)
    return adaptive_pool(tok, m)
