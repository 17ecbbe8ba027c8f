"""A deterministic small decoder-only transformer with skippable blocks.

Pre-LN residual architecture: every layer applies LayerNorm before its
attention and MLP sub-blocks and adds each sub-block's output back onto the
residual stream, so "block output equals block input" is exactly the notion
of redundancy the pruning criterion probes. The MLP is the plain two-layer
ReLU form; positions are learned absolute embeddings.

Weights are drawn uniform(+-sqrt(3/fan_in)) from the named package PRNG and
snapped to float32 values, so initialization is bit-identical across
platforms. The unembedding starts at zero: an untrained model then emits
exactly uniform logits, which pins the perplexity baseline to the vocab
size. All forward/backward math runs in float64.

Checkpoints use a simple named-tensor container, little-endian:

    magic "TCKP" | version u16 | config_len u16 + config JSON (UTF-8)
    | tensor_count u32 | per tensor (sorted by name):
    name_len u16 + UTF-8 name | ndim u8 | dims u32 each
    | payload float32 | CRC32(payload) u32
"""

from __future__ import annotations

import json
import math
import struct
import time
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import SyntheticCorpus
from .errors import (
    ContractError,
    InputError,
    TraceCorruptionError,
    TraceFormatError,
    TrainingDivergedError,
)
from .numerics import Rng
from .trace import ActivationTrace, Position, SnapshotLabel

LN_EPS = 1e-5

CHECKPOINT_MAGIC = b"TCKP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ToyModelConfig:
    layers: int = 8
    hidden_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    vocab: int = 256
    max_seq: int = 128
    seed: int = 0

    def __post_init__(self):
        for name in ("layers", "hidden_dim", "heads", "ffn_dim", "vocab", "max_seq"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.hidden_dim % self.heads != 0:
            raise ContractError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads


@dataclass(frozen=True)
class BlockMask:
    """Per-layer skip switches; a skipped block contributes exactly zero to
    the residual stream."""

    skip_attention: tuple[bool, ...]
    skip_mlp: tuple[bool, ...]

    def __post_init__(self):
        if len(self.skip_attention) != len(self.skip_mlp):
            raise ContractError("mask lists must have equal length")

    @staticmethod
    def none(layers: int) -> "BlockMask":
        return BlockMask((False,) * layers, (False,) * layers)

    @property
    def layers(self) -> int:
        return len(self.skip_attention)

    @property
    def skipped_count(self) -> int:
        return sum(self.skip_attention) + sum(self.skip_mlp)


def _layer_param_names(i: int) -> list[str]:
    p = f"l{i}."
    return [
        p + "ln1.g", p + "ln1.b", p + "wq", p + "wk", p + "wv", p + "wo",
        p + "ln2.g", p + "ln2.b", p + "w1", p + "b1", p + "w2", p + "b2",
    ]


def param_names(config: ToyModelConfig) -> list[str]:
    names = ["emb", "pos"]
    for i in range(config.layers):
        names.extend(_layer_param_names(i))
    names.extend(["lnf.g", "lnf.b", "unembed"])
    return names


class ToyTransformer:
    """Deterministic decoder; immutable during forward, mutated by training."""

    def __init__(self, config: ToyModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.loss_history: list[float] = []

    # -- construction ------------------------------------------------------

    @classmethod
    def initialize(cls, config: ToyModelConfig) -> "ToyTransformer":
        rng = Rng(config.seed)
        d, ffn = config.hidden_dim, config.ffn_dim

        def draw(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
            bound = math.sqrt(3.0 / fan_in)
            n = int(np.prod(shape))
            u = rng.uniforms(n)
            vals = ((2.0 * u - 1.0) * bound).astype(np.float32)
            return vals.astype(np.float64).reshape(shape)

        params: dict[str, np.ndarray] = {
            "emb": draw((config.vocab, d), d),
            "pos": draw((config.max_seq, d), d),
        }
        for i in range(config.layers):
            p = f"l{i}."
            params[p + "ln1.g"] = np.ones(d)
            params[p + "ln1.b"] = np.zeros(d)
            params[p + "wq"] = draw((d, d), d)
            params[p + "wk"] = draw((d, d), d)
            params[p + "wv"] = draw((d, d), d)
            params[p + "wo"] = draw((d, d), d)
            params[p + "ln2.g"] = np.ones(d)
            params[p + "ln2.b"] = np.zeros(d)
            params[p + "w1"] = draw((d, ffn), d)
            params[p + "b1"] = np.zeros(ffn)
            params[p + "w2"] = draw((ffn, d), ffn)
            params[p + "b2"] = np.zeros(d)
        params["lnf.g"] = np.ones(d)
        params["lnf.b"] = np.zeros(d)
        # Zero unembedding: the untrained model predicts the uniform
        # distribution exactly (perplexity == vocab).
        params["unembed"] = np.zeros((d, config.vocab))
        return cls(config, params)

    # -- forward -----------------------------------------------------------

    def _check_tokens(self, batch: np.ndarray) -> None:
        if batch.shape[1] > self.config.max_seq:
            raise InputError(
                f"sequence length {batch.shape[1]} exceeds max_seq "
                f"{self.config.max_seq}"
            )
        if batch.min() < 0 or batch.max() >= self.config.vocab:
            raise InputError(
                f"token ids must lie in [0, {self.config.vocab})"
            )

    @staticmethod
    def _ln(x: np.ndarray, g: np.ndarray, b: np.ndarray):
        mu = x.mean(axis=-1, keepdims=True)
        var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LN_EPS)
        xhat = (x - mu) * inv
        return xhat * g + b, xhat, inv

    def _forward_batch(self, batch: np.ndarray, mask: BlockMask,
                       keep: bool = False):
        """Run (B, T) token ids through the stack.

        Returns (logits, residual_snapshots, cache). `residual_snapshots` is
        the 2L+1 list of residual-stream states (B, T, d); `cache` holds the
        intermediates backward needs when `keep` is set.
        """
        cfg = self.config
        P = self.params
        B, T = batch.shape
        H, dk = cfg.heads, cfg.head_dim
        scale = 1.0 / math.sqrt(dk)
        causal = np.triu(np.full((T, T), -np.inf), k=1)

        h = P["emb"][batch] + P["pos"][:T]
        snapshots = [h]
        cache = {"batch": batch, "layers": []} if keep else None
        for i in range(cfg.layers):
            p = f"l{i}."
            layer_cache = {} if keep else None
            if not mask.skip_attention[i]:
                x1, xhat1, inv1 = self._ln(h, P[p + "ln1.g"], P[p + "ln1.b"])
                q = (x1 @ P[p + "wq"]).reshape(B, T, H, dk).transpose(0, 2, 1, 3)
                k = (x1 @ P[p + "wk"]).reshape(B, T, H, dk).transpose(0, 2, 1, 3)
                v = (x1 @ P[p + "wv"]).reshape(B, T, H, dk).transpose(0, 2, 1, 3)
                scores = q @ k.transpose(0, 1, 3, 2) * scale + causal
                scores -= scores.max(axis=-1, keepdims=True)
                probs = np.exp(scores)
                probs /= probs.sum(axis=-1, keepdims=True)
                ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.hidden_dim)
                att = ctx @ P[p + "wo"]
                if keep:
                    layer_cache.update(
                        h_in=h, xhat1=xhat1, inv1=inv1, x1=x1,
                        q=q, k=k, v=v, probs=probs, ctx=ctx,
                    )
                h = h + att
            snapshots.append(h)
            if not mask.skip_mlp[i]:
                x2, xhat2, inv2 = self._ln(h, P[p + "ln2.g"], P[p + "ln2.b"])
                pre = x2 @ P[p + "w1"] + P[p + "b1"]
                act = np.maximum(pre, 0.0)
                mlp = act @ P[p + "w2"] + P[p + "b2"]
                if keep:
                    layer_cache.update(
                        h_mid=h, xhat2=xhat2, inv2=inv2, x2=x2,
                        pre=pre, act=act,
                    )
                h = h + mlp
            snapshots.append(h)
            if keep:
                cache["layers"].append(layer_cache)

        xf, xhatf, invf = self._ln(h, P["lnf.g"], P["lnf.b"])
        logits = xf @ P["unembed"]
        if keep:
            cache.update(h_final=h, xhatf=xhatf, invf=invf, xf=xf)
        return logits, snapshots, cache

    def forward(self, tokens: Sequence[int], mask: BlockMask | None = None,
                capture: bool = False):
        """Logits for one sequence; optionally the captured activation trace."""
        cfg = self.config
        mask = mask or BlockMask.none(cfg.layers)
        batch = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        self._check_tokens(batch)
        logits, snapshots, _ = self._forward_batch(batch, mask)
        trace = None
        if capture:
            trace = self._snapshots_to_trace(snapshots, batch)
        return logits[0], trace

    def _snapshots_to_trace(self, snapshots, batch) -> ActivationTrace:
        cfg = self.config
        labels = [SnapshotLabel(0, Position.PRE_ATTENTION)]
        for i in range(cfg.layers):
            labels.append(SnapshotLabel(i, Position.POST_ATTENTION))
            labels.append(SnapshotLabel(i, Position.POST_MLP))
        token_count = batch.shape[0] * batch.shape[1]
        return ActivationTrace(
            hidden_dim=cfg.hidden_dim,
            token_count=token_count,
            seed=cfg.seed,
            source=f"toy(layers={cfg.layers}, dim={cfg.hidden_dim}, seed={cfg.seed})",
            snapshots=[
                (label, snap.reshape(token_count, cfg.hidden_dim).astype(np.float32))
                for label, snap in zip(labels, snapshots)
            ],
        )

    # -- loss and gradients --------------------------------------------------

    def loss(self, batch: np.ndarray, mask: BlockMask | None = None) -> float:
        mask = mask or BlockMask.none(self.config.layers)
        batch = np.atleast_2d(np.asarray(batch, dtype=np.int64))
        self._check_tokens(batch)
        logits, _, _ = self._forward_batch(batch, mask)
        return self._cross_entropy(logits, batch)

    @staticmethod
    def _cross_entropy(logits: np.ndarray, batch: np.ndarray) -> float:
        rows = logits[:, :-1, :]
        targets = batch[:, 1:]
        m = rows.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(rows - m).sum(axis=-1)) + m[..., 0]
        picked = np.take_along_axis(rows, targets[..., None], axis=-1)[..., 0]
        return float((lse - picked).mean())

    def loss_and_grads(self, batch: np.ndarray,
                       mask: BlockMask | None = None):
        """Mean next-token cross-entropy and its gradient for every parameter."""
        cfg = self.config
        P = self.params
        mask = mask or BlockMask.none(cfg.layers)
        batch = np.atleast_2d(np.asarray(batch, dtype=np.int64))
        self._check_tokens(batch)
        B, T = batch.shape
        H, dk = cfg.heads, cfg.head_dim
        d = cfg.hidden_dim
        scale = 1.0 / math.sqrt(dk)

        logits, _, cache = self._forward_batch(batch, mask, keep=True)
        loss = self._cross_entropy(logits, batch)

        grads = {name: np.zeros_like(P[name]) for name in P}
        count = B * (T - 1)
        m = logits.max(axis=-1, keepdims=True)
        probs = np.exp(logits - m)
        probs /= probs.sum(axis=-1, keepdims=True)
        dlogits = probs / count
        rows = np.arange(T - 1)
        for b in range(B):
            dlogits[b, rows, batch[b, 1:]] -= 1.0 / count
        dlogits[:, -1, :] = 0.0

        flat = lambda a: a.reshape(-1, a.shape[-1])

        # unembedding and final LN
        grads["unembed"] = flat(cache["xf"]).T @ flat(dlogits)
        dxf = dlogits @ P["unembed"].T
        dh = self._ln_backward(
            dxf, cache["xhatf"], cache["invf"], P["lnf.g"],
            grads, "lnf.g", "lnf.b",
        )

        for i in reversed(range(cfg.layers)):
            p = f"l{i}."
            lc = cache["layers"][i]
            if not mask.skip_mlp[i]:
                dmlp = dh
                grads[p + "b2"] += dmlp.sum(axis=(0, 1))
                grads[p + "w2"] += flat(lc["act"]).T @ flat(dmlp)
                dact = dmlp @ P[p + "w2"].T
                dpre = dact * (lc["pre"] > 0)
                grads[p + "b1"] += dpre.sum(axis=(0, 1))
                grads[p + "w1"] += flat(lc["x2"]).T @ flat(dpre)
                dx2 = dpre @ P[p + "w1"].T
                dh = dh + self._ln_backward(
                    dx2, lc["xhat2"], lc["inv2"], P[p + "ln2.g"],
                    grads, p + "ln2.g", p + "ln2.b",
                )
            if not mask.skip_attention[i]:
                datt = dh
                grads[p + "wo"] += flat(lc["ctx"]).T @ flat(datt)
                dctx = (datt @ P[p + "wo"].T).reshape(B, T, H, dk).transpose(0, 2, 1, 3)
                probs_l = lc["probs"]
                dprobs = dctx @ lc["v"].transpose(0, 1, 3, 2)
                dv = probs_l.transpose(0, 1, 3, 2) @ dctx
                dscores = probs_l * (
                    dprobs - (dprobs * probs_l).sum(axis=-1, keepdims=True)
                )
                dq = dscores @ lc["k"] * scale
                dk_ = dscores.transpose(0, 1, 3, 2) @ lc["q"] * scale
                dq_f = dq.transpose(0, 2, 1, 3).reshape(B, T, d)
                dk_f = dk_.transpose(0, 2, 1, 3).reshape(B, T, d)
                dv_f = dv.transpose(0, 2, 1, 3).reshape(B, T, d)
                x1_f = flat(lc["x1"])
                grads[p + "wq"] += x1_f.T @ flat(dq_f)
                grads[p + "wk"] += x1_f.T @ flat(dk_f)
                grads[p + "wv"] += x1_f.T @ flat(dv_f)
                dx1 = dq_f @ P[p + "wq"].T + dk_f @ P[p + "wk"].T + dv_f @ P[p + "wv"].T
                dh = dh + self._ln_backward(
                    dx1, lc["xhat1"], lc["inv1"], P[p + "ln1.g"],
                    grads, p + "ln1.g", p + "ln1.b",
                )

        np.add.at(grads["emb"], batch, dh)
        grads["pos"][:T] += dh.sum(axis=0)
        return loss, grads

    @staticmethod
    def _ln_backward(dy, xhat, inv, gain, grads, g_name, b_name):
        grads[g_name] += (dy * xhat).sum(axis=(0, 1))
        grads[b_name] += dy.sum(axis=(0, 1))
        dxhat = dy * gain
        return inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )

    # -- generation with KV cache -------------------------------------------

    def generate(self, prompt: Sequence[int], gen_len: int,
                 mask: BlockMask | None = None) -> np.ndarray:
        """Greedy autoregressive continuation using per-layer KV caches."""
        cfg = self.config
        P = self.params
        mask = mask or BlockMask.none(cfg.layers)
        prompt = np.asarray(prompt, dtype=np.int64)
        total = prompt.size + gen_len
        if total > cfg.max_seq:
            raise InputError(
                f"prompt + generation length {total} exceeds max_seq {cfg.max_seq}"
            )
        self._check_tokens(prompt[None, :])
        H, dk = cfg.heads, cfg.head_dim
        scale = 1.0 / math.sqrt(dk)

        k_cache = [np.empty((H, total, dk)) for _ in range(cfg.layers)]
        v_cache = [np.empty((H, total, dk)) for _ in range(cfg.layers)]

        # Prefill: batch pass over the prompt, keeping K/V per layer.
        T = prompt.size
        causal = np.triu(np.full((T, T), -np.inf), k=1)
        h = P["emb"][prompt] + P["pos"][:T]
        for i in range(cfg.layers):
            p = f"l{i}."
            # A pruned attention block does no work at all: no LN, no K/V.
            if not mask.skip_attention[i]:
                x1, _, _ = self._ln(h, P[p + "ln1.g"], P[p + "ln1.b"])
                q = (x1 @ P[p + "wq"]).reshape(T, H, dk).transpose(1, 0, 2)
                k = (x1 @ P[p + "wk"]).reshape(T, H, dk).transpose(1, 0, 2)
                v = (x1 @ P[p + "wv"]).reshape(T, H, dk).transpose(1, 0, 2)
                k_cache[i][:, :T] = k
                v_cache[i][:, :T] = v
                scores = q @ k.transpose(0, 2, 1) * scale + causal
                scores -= scores.max(axis=-1, keepdims=True)
                probs = np.exp(scores)
                probs /= probs.sum(axis=-1, keepdims=True)
                ctx = (probs @ v).transpose(1, 0, 2).reshape(T, cfg.hidden_dim)
                h = h + ctx @ P[p + "wo"]
            if not mask.skip_mlp[i]:
                x2, _, _ = self._ln(h, P[p + "ln2.g"], P[p + "ln2.b"])
                h = h + np.maximum(x2 @ P[p + "w1"] + P[p + "b1"], 0.0) @ P[p + "w2"] + P[p + "b2"]

        xf, _, _ = self._ln(h[-1:], P["lnf.g"], P["lnf.b"])
        next_token = int(np.argmax(xf @ P["unembed"]))

        out = np.empty(gen_len, dtype=np.int64)
        pos_at = prompt.size
        for step in range(gen_len):
            out[step] = next_token
            if step == gen_len - 1:
                break
            h_row = (P["emb"][next_token] + P["pos"][pos_at])[None, :]
            seen = pos_at + 1
            for i in range(cfg.layers):
                p = f"l{i}."
                if not mask.skip_attention[i]:
                    x1, _, _ = self._ln(h_row, P[p + "ln1.g"], P[p + "ln1.b"])
                    k_cache[i][:, pos_at] = (x1 @ P[p + "wk"]).reshape(H, dk)
                    v_cache[i][:, pos_at] = (x1 @ P[p + "wv"]).reshape(H, dk)
                    q = (x1 @ P[p + "wq"]).reshape(H, 1, dk)
                    scores = q @ k_cache[i][:, :seen].transpose(0, 2, 1) * scale
                    scores -= scores.max(axis=-1, keepdims=True)
                    probs = np.exp(scores)
                    probs /= probs.sum(axis=-1, keepdims=True)
                    ctx = (probs @ v_cache[i][:, :seen]).reshape(1, cfg.hidden_dim)
                    h_row = h_row + ctx @ P[p + "wo"]
                if not mask.skip_mlp[i]:
                    x2, _, _ = self._ln(h_row, P[p + "ln2.g"], P[p + "ln2.b"])
                    h_row = h_row + np.maximum(
                        x2 @ P[p + "w1"] + P[p + "b1"], 0.0
                    ) @ P[p + "w2"] + P[p + "b2"]
            xf, _, _ = self._ln(h_row, P["lnf.g"], P["lnf.b"])
            next_token = int(np.argmax(xf @ P["unembed"]))
            pos_at += 1
        return out


def init_model(config: ToyModelConfig) -> ToyTransformer:
    return ToyTransformer.initialize(config)


def scale_attention_output(model: ToyTransformer, layer_index: int,
                           factor: float) -> None:
    """Scale layer `layer_index`'s attention output projection in place.

    With a factor near zero the block still runs but contributes almost
    nothing to the residual stream: a planted redundant block.
    """
    if not 0 <= layer_index < model.config.layers:
        raise ContractError(f"layer_index {layer_index} out of range")
    model.params[f"l{layer_index}.wo"] *= float(factor)


def collect_trace(model: ToyTransformer, corpus: SyntheticCorpus,
                  mask: BlockMask | None = None) -> ActivationTrace:
    """Calibration forward passes over the whole corpus, token rows
    concatenated across sequences in corpus order."""
    cfg = model.config
    mask = mask or BlockMask.none(cfg.layers)
    batch = _stack_sequences(model, corpus)
    logits_unused, snapshots, _ = model._forward_batch(batch, mask)
    return model._snapshots_to_trace(snapshots, batch)


def _stack_sequences(model: ToyTransformer, corpus: SyntheticCorpus) -> np.ndarray:
    lengths = {int(s.size) for s in corpus.sequences}
    if len(lengths) != 1:
        raise ContractError("corpus sequences must share one length")
    batch = np.stack(corpus.sequences).astype(np.int64)
    model._check_tokens(batch)
    return batch


def perplexity(model: ToyTransformer, corpus: SyntheticCorpus,
               mask: BlockMask | None = None) -> float:
    """exp of mean next-token cross-entropy over every position."""
    batch = _stack_sequences(model, corpus)
    return math.exp(model.loss(batch, mask))


def train_briefly(model: ToyTransformer, corpus: SyntheticCorpus, steps: int,
                  lr: float, batch_size: int | None = None,
                  seed: int = 0) -> ToyTransformer:
    """Plain gradient descent on cross-entropy.

    batch_size=None uses the full corpus every step (exactly deterministic
    loss curve); otherwise batches cycle in a seeded shuffled order. The
    per-step losses are appended to model.loss_history.
    """
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    batch = _stack_sequences(model, corpus)
    order = list(range(batch.shape[0]))
    rng = Rng(seed)
    cursor = 0
    for step in range(steps):
        if batch_size is None or batch_size >= batch.shape[0]:
            chunk = batch
        else:
            if cursor + batch_size > len(order):
                rng.shuffle(order)
                cursor = 0
            chunk = batch[order[cursor:cursor + batch_size]]
            cursor += batch_size
        loss, grads = model.loss_and_grads(chunk)
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became non-finite at step {step}", step=step
            )
        model.loss_history.append(loss)
        if lr != 0.0:
            for name, g in grads.items():
                model.params[name] -= lr * g
    return model


# -- benchmarking -------------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    mask_index: int
    skipped_blocks: int
    mean_ms: float
    std_ms: float
    times_ms: tuple[float, ...]


def bench_inference(model: ToyTransformer, mask_sequence: Sequence[BlockMask],
                    seq_len: int, gen_len: int, repeats: int,
                    prompt_seed: int = 0) -> list[BenchRow]:
    """Wall-clock of autoregressive generation per mask, serialized, with one
    untimed warmup run per mask to exclude allocator effects."""
    if repeats < 1:
        raise ContractError(f"repeats must be >= 1, got {repeats}")
    rng = Rng(prompt_seed)
    prompt = np.array(
        [rng.below(model.config.vocab) for _ in range(seq_len)], dtype=np.int64
    )
    rows = []
    for idx, mask in enumerate(mask_sequence):
        model.generate(prompt, gen_len, mask)
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            model.generate(prompt, gen_len, mask)
            times.append((time.perf_counter() - start) * 1e3)
        arr = np.array(times)
        rows.append(BenchRow(
            mask_index=idx,
            skipped_blocks=mask.skipped_count,
            mean_ms=float(arr.mean()),
            std_ms=float(arr.std()),
            times_ms=tuple(times),
        ))
    return rows


# -- checkpoint container ------------------------------------------------------

def save_checkpoint(model: ToyTransformer, path) -> None:
    cfg_json = json.dumps(model.config.__dict__, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HH", CHECKPOINT_VERSION, len(cfg_json)))
        fh.write(cfg_json)
        names = sorted(model.params)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            tensor = np.ascontiguousarray(model.params[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            payload = tensor.tobytes()
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path) -> ToyTransformer:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise TraceFormatError(f"bad checkpoint magic {data[:4]!r}")
    version, cfg_len = struct.unpack_from("<HH", data, 4)
    if version != CHECKPOINT_VERSION:
        raise TraceFormatError(f"unsupported checkpoint version {version}")
    offset = 8
    config = ToyModelConfig(**json.loads(data[offset:offset + cfg_len]))
    offset += cfg_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        size = int(np.prod(dims)) * 4
        payload = data[offset:offset + size]
        offset += size
        (crc_stored,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if zlib.crc32(payload) != crc_stored:
            raise TraceCorruptionError(
                f"checksum mismatch in tensor {name}", offset=offset - 4 - size
            )
        params[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
    return ToyTransformer(config, params)


def weight_checksum(model: ToyTransformer) -> int:
    """CRC32 over the float32 encoding of all parameters in canonical order."""
    crc = 0
    for name in param_names(model.config):
        crc = zlib.crc32(
            np.ascontiguousarray(model.params[name], dtype="<f4").tobytes(), crc
        )
    return crc
