"""Graph encoder/decoder with latent and type masking, the cross-attention
constraint block, and the gate-type / degree prediction heads.

Message passing treats edge directions separately: each residual layer mixes
a learned self transform with transforms of the in-neighbor and out-neighbor
aggregates, then applies ReLU and layer norm. The adjacency is never masked
or modified anywhere in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .aig import AigGraph, AigError, NodeType, REAL_TYPES, ceil_fraction, degrees
from .autodiff import Tensor
from .checkpoint import save_checkpoint, load_checkpoint

# Input vocabulary: the four real types plus the masked placeholder.
INPUT_TYPES = REAL_TYPES + (NodeType.MASKED,)
INPUT_TYPE_INDEX = {t: i for i, t in enumerate(INPUT_TYPES)}
NUM_CLASSES = len(REAL_TYPES)


@dataclass
class ModelConfig:
    d: int = 64
    d_v: int = 256
    encoder_layers: int = 7
    decoder_layers: int = 2
    verilog_rows: int = 16  # M, rows of the pooled code representation
    aggregation: str = "mean"  # "sum" keeps neighbor counts observable
    dtype: str = "float32"
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class MaskSelection:
    kept: tuple
    masked: tuple
    n_masked: int
    ratio: float
    seed: int


class ModelParams:
    """Named parameter tensors for the encoder, decoder, constraint block,
    mask token, and prediction heads."""

    def __init__(self, config: ModelConfig, tensors: dict | None = None):
        self.config = config
        if tensors is not None:
            self.tensors = tensors
            self._check_shapes()
        else:
            self.tensors = self._init_tensors()

    def _init_tensors(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        bound = 1.0 / math.sqrt(cfg.d)
        dtype = np.dtype(cfg.dtype)

        def uniform(shape):
            return ad.parameter(rng.uniform(-bound, bound, size=shape), dtype=dtype)

        def zeros(shape):
            return ad.parameter(np.zeros(shape), dtype=dtype)

        def ones(shape):
            return ad.parameter(np.ones(shape), dtype=dtype)

        t = {"type_table": uniform((len(INPUT_TYPES), cfg.d)),
             "mask_token": zeros((1, cfg.d))}
        for prefix, layers in (("enc", cfg.encoder_layers),
                               ("dec", cfg.decoder_layers)):
            for l in range(layers):
                t[f"{prefix}{l}.w_self"] = uniform((cfg.d, cfg.d))
                t[f"{prefix}{l}.w_in"] = uniform((cfg.d, cfg.d))
                t[f"{prefix}{l}.w_out"] = uniform((cfg.d, cfg.d))
                t[f"{prefix}{l}.b"] = zeros((cfg.d,))
                t[f"{prefix}{l}.ln_gain"] = ones((cfg.d,))
                t[f"{prefix}{l}.ln_bias"] = zeros((cfg.d,))
        t["attn.w_q"] = uniform((cfg.d, cfg.d))
        t["attn.w_k"] = uniform((cfg.d_v, cfg.d))
        t["attn.w_v"] = uniform((cfg.d_v, cfg.d))
        t["head_type.w"] = uniform((cfg.d, NUM_CLASSES))
        t["head_type.b"] = zeros((NUM_CLASSES,))
        for head in ("head_in", "head_out"):
            t[f"{head}.w"] = uniform((cfg.d, 1))
            t[f"{head}.b"] = zeros((1,))
        return t

    def _check_shapes(self):
        expected = ModelParams(self.config).tensors
        if set(expected) != set(self.tensors):
            raise ValueError("checkpoint parameter names do not match config")
        for name, ref in expected.items():
            if self.tensors[name].data.shape != ref.data.shape:
                raise ValueError(
                    f"parameter {name!r}: shape {self.tensors[name].data.shape} "
                    f"!= expected {ref.data.shape}")

    def __getitem__(self, name):
        return self.tensors[name]

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def grads(self):
        return {n: t.grad for n, t in self.tensors.items() if t.grad is not None}

    def param_count(self):
        """Total size plus the core count (constraint block excluded), the
        figure that matches the headline model size."""
        total = sum(t.data.size for t in self.tensors.values())
        attn = sum(t.data.size for n, t in self.tensors.items()
                   if n.startswith("attn."))
        return {"total": total, "core": total - attn, "constraint_block": attn}

    def save(self, path):
        save_checkpoint(path, self.tensors, dtype=self.config.dtype)

    @classmethod
    def load(cls, path, config: ModelConfig):
        return cls(config, tensors=load_checkpoint(path))


class GraphContext:
    """Precomputed per-graph constants used by every forward pass."""

    def __init__(self, graph: AigGraph, config: ModelConfig):
        self.graph = graph
        self.n = graph.num_nodes
        self.type_indices = np.array(
            [INPUT_TYPE_INDEX[t] for t in graph.types], dtype=np.intp)
        dtype = np.dtype(config.dtype)
        n = self.n
        m_in = np.zeros((n, n), dtype=dtype)
        m_out = np.zeros((n, n), dtype=dtype)
        for s, d, m in graph.edges:
            m_in[d, s] += m
            m_out[s, d] += m
        din, dout = degrees(graph)
        if config.aggregation == "mean":
            for i in range(n):
                if din[i]:
                    m_in[i] /= din[i]
                if dout[i]:
                    m_out[i] /= dout[i]
        elif config.aggregation != "sum":
            raise ValueError(f"unknown aggregation {config.aggregation!r}")
        self.m_in = ad.constant(m_in, dtype=dtype)
        self.m_out = ad.constant(m_out, dtype=dtype)
        self.in_degrees = np.asarray(din, dtype=dtype)
        self.out_degrees = np.asarray(dout, dtype=dtype)

    def with_types(self, graph: AigGraph) -> "GraphContext":
        """Same adjacency, different node types (for the type-masked pass)."""
        if graph.edges != self.graph.edges:
            raise AigError("with_types requires an identical edge set")
        clone = object.__new__(GraphContext)
        clone.graph = graph
        clone.n = self.n
        clone.type_indices = np.array(
            [INPUT_TYPE_INDEX[t] for t in graph.types], dtype=np.intp)
        clone.m_in = self.m_in
        clone.m_out = self.m_out
        clone.in_degrees = self.in_degrees
        clone.out_degrees = self.out_degrees
        return clone


def _context(graph, config):
    if isinstance(graph, GraphContext):
        return graph
    return GraphContext(graph, config)


def _mp_layer(x: Tensor, ctx: GraphContext, params: ModelParams, key: str) -> Tensor:
    agg_in = ad.matmul(ad.matmul(ctx.m_in, x), params[f"{key}.w_in"])
    agg_out = ad.matmul(ad.matmul(ctx.m_out, x), params[f"{key}.w_out"])
    msg = ad.add(ad.add(ad.matmul(x, params[f"{key}.w_self"]), agg_in),
                 ad.add(agg_out, params[f"{key}.b"]))
    normed = ad.layer_norm(ad.relu(msg), params[f"{key}.ln_gain"],
                           params[f"{key}.ln_bias"])
    return ad.add(x, normed)


def encode(graph, params: ModelParams) -> Tensor:
    """Type-embedding lookup followed by the residual encoder stack."""
    ctx = _context(graph, params.config)
    x = ad.gather_rows(params["type_table"], ctx.type_indices)
    for l in range(params.config.encoder_layers):
        x = _mp_layer(x, ctx, params, f"enc{l}")
    return x


def decode(embeddings: Tensor, graph, params: ModelParams) -> Tensor:
    """Reconstruction stack over the same, unmasked adjacency."""
    ctx = _context(graph, params.config)
    if embeddings.shape[0] != ctx.n:
        raise AigError(
            f"embedding rows {embeddings.shape[0]} != node count {ctx.n}")
    x = embeddings
    for l in range(params.config.decoder_layers):
        x = _mp_layer(x, ctx, params, f"dec{l}")
    return x


def select_mask(n: int, ratio: float, seed: int) -> MaskSelection:
    """Seeded uniform sample (without replacement) of ceil(ratio * n) nodes."""
    if not 0.0 <= ratio < 1.0:
        raise AigError(f"masking ratio {ratio} outside [0, 1)")
    n_masked = ceil_fraction(ratio, n)
    order = np.random.default_rng(seed).permutation(n)
    masked = tuple(sorted(int(i) for i in order[:n_masked]))
    kept = tuple(sorted(int(i) for i in order[n_masked:]))
    return MaskSelection(kept=kept, masked=masked, n_masked=n_masked,
                         ratio=ratio, seed=seed)


def mask_latent(embeddings: Tensor, ratio: float, seed: int,
                mask_token: Tensor):
    """Replace a sampled subset of embedding rows with the mask token."""
    n = embeddings.shape[0]
    sel = select_mask(n, ratio, seed)
    dtype = embeddings.data.dtype
    keep = np.zeros((n, n), dtype=dtype)
    for i in sel.kept:
        keep[i, i] = 1.0
    indicator = np.zeros((n, 1), dtype=dtype)
    for i in sel.masked:
        indicator[i, 0] = 1.0
    masked = ad.add(ad.matmul(ad.constant(keep, dtype=dtype), embeddings),
                    ad.matmul(ad.constant(indicator, dtype=dtype), mask_token))
    return masked, sel


def mask_types(graph: AigGraph, ratio: float, seed: int):
    """Return a copy of the graph with a sampled subset of node types replaced
    by the masked placeholder; adjacency untouched, input graph unmodified."""
    if any(t is NodeType.MASKED for t in graph.types):
        raise AigError("graph already contains masked types")
    sel = select_mask(graph.num_nodes, ratio, seed)
    types = list(graph.types)
    for i in sel.masked:
        types[i] = NodeType.MASKED
    masked = AigGraph(types, graph.edges, graph.outputs, name=graph.name,
                      pinned=graph.pinned, pi_names=graph.pi_names,
                      po_names=graph.po_names)
    return masked, sel


def cross_attention(aig_rep: Tensor, code_rep: Tensor, params: ModelParams,
                    return_weights: bool = False):
    """Constrain the masked-graph representation with the code representation:
    softmax(Q K^T / sqrt(d)) V with Q from the graph side, K/V from the code."""
    cfg = params.config
    if code_rep.shape[0] < 1:
        raise AigError("code representation needs at least one row")
    if code_rep.shape[1] != cfg.d_v:
        raise AigError(f"code representation width {code_rep.shape[1]} != d_v "
                       f"{cfg.d_v}")
    q = ad.matmul(aig_rep, params["attn.w_q"])
    k = ad.matmul(code_rep, params["attn.w_k"])
    v = ad.matmul(code_rep, params["attn.w_v"])
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(cfg.d))
    weights = ad.row_softmax(scores)
    out = ad.matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def predict_types(reconstructed: Tensor, params: ModelParams) -> Tensor:
    """Row-stochastic class probabilities over the four real gate types."""
    logits = ad.add(ad.matmul(reconstructed, params["head_type.w"]),
                    params["head_type.b"])
    return ad.row_softmax(logits)


def predict_degrees(reconstructed: Tensor, params: ModelParams):
    """Unconstrained scalar in-degree and out-degree estimates, (N,1) each."""
    d_in = ad.add(ad.matmul(reconstructed, params["head_in.w"]),
                  params["head_in.b"])
    d_out = ad.add(ad.matmul(reconstructed, params["head_out.w"]),
                   params["head_out.b"])
    return d_in, d_out
