"""Masked-gate and code-aligned training: loss terms, single-sample steps,
and the combined training loop with gradient accumulation, a linear learning
rate schedule, checkpointing, and a CSV metrics log.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from .aig import AigGraph, AigError, NodeType, TYPE_INDEX, insert_buffers
from .autodiff import Tensor
from .model import (GraphContext, ModelConfig, ModelParams, cross_attention,
                    decode, encode, mask_latent, mask_types, predict_degrees,
                    predict_types, NUM_CLASSES)
from .optim import AdamState, adam_step, linear_lr


@dataclass
class TrainConfig:
    mgm_ratio: float = 0.3
    vga_ratio: float = 0.5
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 512
    epochs: int = 3
    seed: int = 0
    schedule: str = "linear"
    buffer_probability: float = 0.1
    loss_mode: str = "sum"  # "sum" adds both terms per batch, "alternate" flips
    checkpoint_every: int = 0  # batches between checkpoints; 0 = final only

    def __post_init__(self):
        if not 0.0 <= self.mgm_ratio < 1.0 or not 0.0 <= self.vga_ratio < 1.0:
            raise ValueError("masking ratios must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.schedule not in ("linear", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.loss_mode not in ("sum", "alternate"):
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class LabelBundle:
    """Reconstruction targets: one-hot real types plus degree labels."""

    type_onehot: np.ndarray  # (N, 4)
    type_index: np.ndarray   # (N,)
    in_degrees: np.ndarray   # (N, 1)
    out_degrees: np.ndarray  # (N, 1)

    @classmethod
    def from_graph(cls, graph: AigGraph, dtype="float32") -> "LabelBundle":
        if any(t is NodeType.MASKED for t in graph.types):
            raise AigError("labels require real node types")
        idx = np.array([TYPE_INDEX[t] for t in graph.types], dtype=np.intp)
        onehot = np.zeros((graph.num_nodes, NUM_CLASSES), dtype=dtype)
        if graph.num_nodes:
            onehot[np.arange(graph.num_nodes), idx] = 1.0
        din = np.zeros((graph.num_nodes, 1), dtype=dtype)
        dout = np.zeros((graph.num_nodes, 1), dtype=dtype)
        for s, d, m in graph.edges:
            din[d, 0] += m
            dout[s, 0] += m
        return cls(type_onehot=onehot, type_index=idx, in_degrees=din,
                   out_degrees=dout)


def loss_type(probs: Tensor, labels: LabelBundle, masked) -> Tensor:
    """Cross entropy averaged over the masked nodes only."""
    masked = tuple(masked)
    if not masked:
        raise AigError("type loss needs a nonempty masked set")
    target = ad.constant(labels.type_onehot[list(masked)], dtype=probs.dtype)
    return ad.cross_entropy_rows(gather(probs, masked), target)


def loss_degree(d_in: Tensor, d_out: Tensor, labels: LabelBundle, masked) -> Tensor:
    """Mean over masked nodes of squared in-degree plus out-degree error."""
    masked = tuple(masked)
    if not masked:
        raise AigError("degree loss needs a nonempty masked set")
    rows = list(masked)
    t_in = ad.constant(labels.in_degrees[rows], dtype=d_in.dtype)
    t_out = ad.constant(labels.out_degrees[rows], dtype=d_out.dtype)
    return ad.add(ad.squared_error(gather(d_in, masked), t_in),
                  ad.squared_error(gather(d_out, masked), t_out))


def gather(tensor: Tensor, rows) -> Tensor:
    return ad.gather_rows(tensor, list(rows))


@dataclass
class StepResult:
    loss: float
    loss_type: float
    loss_degree: float
    grads: dict
    selection: object
    type_accuracy: float
    degree_mse: float
    loss_tensor: Tensor = field(repr=False, default=None)


def _head_metrics(probs, d_in, d_out, labels, masked):
    rows = list(masked)
    pred = probs.data[rows].argmax(axis=1)
    acc = float((pred == labels.type_index[rows]).mean())
    err_in = d_in.data[rows, 0] - labels.in_degrees[rows, 0]
    err_out = d_out.data[rows, 0] - labels.out_degrees[rows, 0]
    mse = float((err_in ** 2).mean() + (err_out ** 2).mean()) / 2.0
    return acc, mse


def mgm_step(graph, params: ModelParams, config: TrainConfig, seed: int,
             ctx: GraphContext | None = None,
             labels: LabelBundle | None = None,
             backward: bool = True) -> StepResult:
    """Encode unmasked, mask in latent space, decode, score masked nodes."""
    ctx = ctx or GraphContext(graph, params.config)
    labels = labels or LabelBundle.from_graph(ctx.graph, params.config.dtype)
    x = encode(ctx, params)
    masked_x, sel = mask_latent(x, config.mgm_ratio, seed, params["mask_token"])
    recon = decode(masked_x, ctx, params)
    probs = predict_types(recon, params)
    d_in, d_out = predict_degrees(recon, params)
    l_type = loss_type(probs, labels, sel.masked)
    l_degree = loss_degree(d_in, d_out, labels, sel.masked)
    total = ad.add(l_type, l_degree)
    grads = {}
    if backward:
        params.zero_grad()
        total.backward()
        grads = params.grads()
    acc, mse = _head_metrics(probs, d_in, d_out, labels, sel.masked)
    return StepResult(loss=total.item(), loss_type=l_type.item(),
                      loss_degree=l_degree.item(), grads=grads, selection=sel,
                      type_accuracy=acc, degree_mse=mse, loss_tensor=total)


def vga_step(graph, code_rep, params: ModelParams, config: TrainConfig,
             seed: int, ctx: GraphContext | None = None,
             labels: LabelBundle | None = None,
             backward: bool = True) -> StepResult:
    """Mask node types, encode the masked graph, constrain with the code
    representation via cross attention, decode, score masked nodes."""
    ctx = ctx or GraphContext(graph, params.config)
    labels = labels or LabelBundle.from_graph(ctx.graph, params.config.dtype)
    masked_graph, sel = mask_types(ctx.graph, config.vga_ratio, seed)
    if not sel.masked:
        raise AigError("code-aligned step needs a nonzero masking ratio")
    masked_ctx = ctx.with_types(masked_graph)
    code = code_rep if isinstance(code_rep, Tensor) else \
        ad.constant(np.asarray(code_rep.matrix if hasattr(code_rep, "matrix")
                               else code_rep), dtype=params.config.dtype)
    x = encode(masked_ctx, params)
    constrained = cross_attention(x, code, params)
    recon = decode(constrained, masked_ctx, params)
    probs = predict_types(recon, params)
    d_in, d_out = predict_degrees(recon, params)
    l_type = loss_type(probs, labels, sel.masked)
    l_degree = loss_degree(d_in, d_out, labels, sel.masked)
    total = ad.add(l_type, l_degree)
    grads = {}
    if backward:
        params.zero_grad()
        total.backward()
        grads = params.grads()
    acc, mse = _head_metrics(probs, d_in, d_out, labels, sel.masked)
    return StepResult(loss=total.item(), loss_type=l_type.item(),
                      loss_degree=l_degree.item(), grads=grads, selection=sel,
                      type_accuracy=acc, degree_mse=mse, loss_tensor=total)


@dataclass
class TrainingSample:
    graph: AigGraph
    code: object = None  # VerilogRep or raw (M, d_v) matrix, None when unpaired
    sample_id: str = ""


def derive_seed(*parts) -> int:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def _batches(items, size):
    for start in range(0, len(items), size):
        yield items[start:start + size]


@dataclass
class TrainResult:
    params: ModelParams
    checkpoint_path: str
    metrics_path: str
    steps: int
    final_metrics: dict


def train(samples, train_config: TrainConfig, model_config: ModelConfig,
          out_dir: str) -> TrainResult:
    """Full training loop over (graph, optional code) samples.

    Per batch the objective is the masked-gate loss plus, for paired samples,
    the code-aligned loss. Buffer augmentation is re-rolled per epoch with
    fresh seeds and is never applied at evaluation time. Two runs with the
    same seed produce bit-identical checkpoints.
    """
    if not samples:
        raise AigError("training dataset is empty")
    os.makedirs(out_dir, exist_ok=True)
    params = ModelParams(model_config)
    opt = AdamState(lr=train_config.lr, beta1=0.9, beta2=0.999, eps=1e-8,
                    weight_decay=train_config.weight_decay)
    batch_size = max(1, train_config.batch_size)
    batches_per_epoch = (len(samples) + batch_size - 1) // batch_size
    total_steps = train_config.epochs * batches_per_epoch

    base_ctx = [GraphContext(s.graph, model_config) for s in samples]
    base_labels = [LabelBundle.from_graph(s.graph, model_config.dtype)
                   for s in samples]

    metrics_path = os.path.join(out_dir, "metrics.csv")
    checkpoint_path = os.path.join(out_dir, "model.ckpt")
    step = 0
    last = {}
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "loss_mgm", "loss_vga",
                         "type_accuracy"])
        for epoch in range(train_config.epochs):
            epoch_data = []
            for idx, sample in enumerate(samples):
                if train_config.buffer_probability > 0:
                    aug = insert_buffers(
                        sample.graph, train_config.buffer_probability,
                        derive_seed(train_config.seed, epoch, idx, "aug"))
                    ctx = GraphContext(aug, model_config)
                    labels = LabelBundle.from_graph(aug, model_config.dtype)
                else:
                    ctx, labels = base_ctx[idx], base_labels[idx]
                epoch_data.append((idx, sample, ctx, labels))

            for batch_index, batch in enumerate(_batches(epoch_data, batch_size)):
                acc_grads = {}
                mgm_losses, vga_losses, accs = [], [], []
                use_vga = (train_config.loss_mode == "sum"
                           or (step % 2 == 1))
                use_mgm = (train_config.loss_mode == "sum"
                           or (step % 2 == 0))
                for idx, sample, ctx, labels in batch:
                    contributions = []
                    if use_mgm:
                        res = mgm_step(ctx.graph, params, train_config,
                                       derive_seed(train_config.seed, epoch,
                                                   idx, "mgm"),
                                       ctx=ctx, labels=labels)
                        contributions.append(res.grads)
                        mgm_losses.append(res.loss)
                        accs.append(res.type_accuracy)
                    if use_vga and sample.code is not None \
                            and train_config.vga_ratio > 0:
                        res = vga_step(ctx.graph, sample.code, params,
                                       train_config,
                                       derive_seed(train_config.seed, epoch,
                                                   idx, "vga"),
                                       ctx=ctx, labels=labels)
                        contributions.append(res.grads)
                        vga_losses.append(res.loss)
                    for grads in contributions:
                        for name, g in grads.items():
                            if name in acc_grads:
                                acc_grads[name] = acc_grads[name] + g
                            else:
                                acc_grads[name] = g.copy()
                if acc_grads:
                    for name in acc_grads:
                        acc_grads[name] /= len(batch)
                    lr = linear_lr(train_config.lr, step, total_steps) \
                        if train_config.schedule == "linear" else train_config.lr
                    adam_step(params.tensors, acc_grads, opt, lr=lr)
                last = {
                    "loss_mgm": float(np.mean(mgm_losses)) if mgm_losses else None,
                    "loss_vga": float(np.mean(vga_losses)) if vga_losses else None,
                    "type_accuracy": float(np.mean(accs)) if accs else None,
                }
                writer.writerow([
                    step, epoch,
                    "" if last["loss_mgm"] is None else f"{last['loss_mgm']:.6f}",
                    "" if last["loss_vga"] is None else f"{last['loss_vga']:.6f}",
                    "" if last["type_accuracy"] is None
                    else f"{last['type_accuracy']:.4f}"])
                step += 1
                if train_config.checkpoint_every and \
                        step % train_config.checkpoint_every == 0:
                    params.save(checkpoint_path)
    params.save(checkpoint_path)
    return TrainResult(params=params, checkpoint_path=checkpoint_path,
                       metrics_path=metrics_path, steps=step,
                       final_metrics=last)


def evaluate_reconstruction(samples, params: ModelParams, ratio: float,
                            seed: int):
    """Masked type accuracy and degree MSE over unaugmented graphs, using a
    fixed evaluation mask per sample."""
    cfg = TrainConfig(mgm_ratio=ratio, buffer_probability=0.0)
    accs, mses = [], []
    for idx, sample in enumerate(samples):
        res = mgm_step(sample.graph, params, cfg,
                       derive_seed(seed, idx, "eval"), backward=False)
        accs.append(res.type_accuracy)
        mses.append(res.degree_mse)
    return {"type_accuracy": float(np.mean(accs)),
            "degree_mse": float(np.mean(mses))}
