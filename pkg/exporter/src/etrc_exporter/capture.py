"""Boundary capture via forward hooks.

The rule maps llama-style module naming onto trace labels:

* a forward-pre-hook on the first decoder block captures its input — the
  embedding output, label (0, PreAttention);
* a forward-pre-hook on each block's `post_attention_layernorm` captures its
  input — the post-attention residual state, label (i, PostAttention);
* a forward hook on each block captures its output — the post-MLP residual
  state, label (i, PostMLP).

That yields exactly 2L+1 boundaries per forward pass; any other count means
the naming rule does not fit the architecture and is a hard error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .tiny import load_tiny
from .writer import sample_rows, write_etrc

PRE_ATTENTION = 0
POST_ATTENTION = 1
POST_MLP = 2


class BoundaryCountError(RuntimeError):
    """The hook rule did not produce 2L+1 boundaries on this architecture."""


@dataclass
class HookSpec:
    model_id: str
    max_tokens: int = 4096
    seed: int = 0
    layers_path: str = "layers"
    post_attention_norm: str = "post_attention_layernorm"
    identity_patch: bool = False
    extra: dict = field(default_factory=dict)


def _resolve(module, dotted: str):
    node = module
    for part in dotted.split("."):
        try:
            node = getattr(node, part)
        except AttributeError:
            raise BoundaryCountError(
                f"module path {dotted!r} does not exist on "
                f"{type(module).__name__}: the boundary naming rule does "
                "not fit this architecture"
            ) from None
    return node


def load_model(spec: HookSpec):
    """Load a tiny checkpoint (*.pt) or, if available, a transformers model.

    Real pretrained checkpoints use the same boundary rule but verifying
    them needs multi-GB downloads; that path is a documented manual
    procedure, not part of the automated tests.
    """
    if spec.model_id.endswith(".pt"):
        return load_tiny(spec.model_id)
    try:
        from transformers import AutoModelForCausalLM
    except ImportError as exc:
        raise RuntimeError(
            f"model id {spec.model_id!r} is not a .pt checkpoint and "
            "transformers is not installed"
        ) from exc
    model = AutoModelForCausalLM.from_pretrained(
        spec.model_id, torch_dtype=torch.float32
    )
    model.eval()
    if spec.layers_path == "layers" and not hasattr(model, "layers"):
        spec.layers_path = "model.layers"
    return model


def _apply_identity_patch(blocks) -> None:
    """Make every block contribute nothing: its sub-module outputs become
    zero, so the residual stream passes through unchanged."""
    def zero_like_forward(module):
        original = module.forward

        def patched(*args, **kwargs):
            out = original(*args, **kwargs)
            if isinstance(out, tuple):
                return (torch.zeros_like(out[0]), *out[1:])
            return torch.zeros_like(out)

        module.forward = patched

    for block in blocks:
        zero_like_forward(block.self_attn)
        zero_like_forward(block.mlp)


def capture_boundaries(model, spec: HookSpec,
                       sequences: list[np.ndarray]) -> list[tuple[int, int, np.ndarray]]:
    """Run every sequence through `model`, returning the 2L+1 labeled
    boundary matrices with token rows concatenated across sequences."""
    blocks = list(_resolve(model, spec.layers_path))
    if not blocks:
        raise BoundaryCountError("model has no decoder blocks")
    if spec.identity_patch:
        _apply_identity_patch(blocks)

    captured: dict[tuple[int, int], list[np.ndarray]] = {}
    hooks = []

    def record(label):
        def fn(tensor):
            arr = tensor.detach().to(torch.float32).cpu().numpy()
            captured.setdefault(label, []).append(arr.reshape(-1, arr.shape[-1]))
        return fn

    def pre_hook(label):
        rec = record(label)
        return lambda module, args: rec(args[0])

    def out_hook(label):
        rec = record(label)
        return lambda module, args, output: rec(
            output[0] if isinstance(output, tuple) else output
        )

    hooks.append(blocks[0].register_forward_pre_hook(
        pre_hook((0, PRE_ATTENTION))
    ))
    for i, block in enumerate(blocks):
        norm = _resolve(block, spec.post_attention_norm)
        hooks.append(norm.register_forward_pre_hook(
            pre_hook((i, POST_ATTENTION))
        ))
        hooks.append(block.register_forward_hook(out_hook((i, POST_MLP))))

    try:
        with torch.no_grad():
            for seq in sequences:
                ids = torch.as_tensor(np.asarray(seq, dtype=np.int64))[None, :]
                captured_before = sum(len(v) for v in captured.values())
                model(ids)
                produced = sum(len(v) for v in captured.values()) - captured_before
                if produced != 2 * len(blocks) + 1:
                    raise BoundaryCountError(
                        f"forward pass produced {produced} boundary captures, "
                        f"expected {2 * len(blocks) + 1}: the naming rule "
                        "does not fit this architecture"
                    )
    finally:
        for h in hooks:
            h.remove()

    labels = [(0, PRE_ATTENTION)]
    for i in range(len(blocks)):
        labels.extend([(i, POST_ATTENTION), (i, POST_MLP)])
    return [
        (layer, position, np.concatenate(captured[(layer, position)], axis=0))
        for layer, position in labels
    ]


def export_trace(spec: HookSpec, sequences: list[np.ndarray], out_path) -> int:
    """Capture, downsample to the token budget, write ETRC v1. Returns bytes
    written. Deterministic for identical (spec, sequences)."""
    model = load_model(spec)
    boundaries = capture_boundaries(model, spec, sequences)
    total = boundaries[0][2].shape[0]
    rows = sample_rows(total, spec.max_tokens, spec.seed)
    snapshots = [
        (layer, position, np.ascontiguousarray(sample[rows]))
        for layer, position, sample in boundaries
    ]
    source = f"export({spec.model_id}, tokens={len(rows)}, seed={spec.seed})"
    return write_etrc(out_path, snapshots, spec.seed, source)
