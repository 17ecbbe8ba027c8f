"""A minimal decoder-only reference model with the module layout the hook
rule expects (mirrors llama-style naming: `layers[i].self_attn`,
`layers[i].post_attention_layernorm`, `layers[i].mlp`). Ships as the tiny
test checkpoint; not meant to be a good language model."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class TinyDecoderConfig:
    layers: int = 2
    hidden_dim: int = 16
    heads: int = 2
    ffn_dim: int = 32
    vocab: int = 64
    max_seq: int = 64


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim, bias=False)
        self.k_proj = nn.Linear(dim, dim, bias=False)
        self.v_proj = nn.Linear(dim, dim, bias=False)
        self.o_proj = nn.Linear(dim, dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        hd = d // self.heads
        q = self.q_proj(x).view(b, t, self.heads, hd).transpose(1, 2)
        k = self.k_proj(x).view(b, t, self.heads, hd).transpose(1, 2)
        v = self.v_proj(x).view(b, t, self.heads, hd).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / hd ** 0.5
        mask = torch.triu(torch.full((t, t), float("-inf")), diagonal=1)
        probs = torch.softmax(scores + mask, dim=-1)
        return self.o_proj((probs @ v).transpose(1, 2).reshape(b, t, d))


class Mlp(nn.Module):
    def __init__(self, dim: int, ffn: int):
        super().__init__()
        self.up_proj = nn.Linear(dim, ffn)
        self.down_proj = nn.Linear(ffn, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.down_proj(torch.relu(self.up_proj(x)))


class DecoderBlock(nn.Module):
    def __init__(self, config: TinyDecoderConfig):
        super().__init__()
        self.input_layernorm = nn.LayerNorm(config.hidden_dim)
        self.self_attn = CausalSelfAttention(config.hidden_dim, config.heads)
        self.post_attention_layernorm = nn.LayerNorm(config.hidden_dim)
        self.mlp = Mlp(config.hidden_dim, config.ffn_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.self_attn(self.input_layernorm(x))
        x = x + self.mlp(self.post_attention_layernorm(x))
        return x


class TinyDecoder(nn.Module):
    def __init__(self, config: TinyDecoderConfig):
        super().__init__()
        self.config = config
        self.embed_tokens = nn.Embedding(config.vocab, config.hidden_dim)
        self.embed_positions = nn.Embedding(config.max_seq, config.hidden_dim)
        self.layers = nn.ModuleList(
            DecoderBlock(config) for _ in range(config.layers)
        )
        self.final_norm = nn.LayerNorm(config.hidden_dim)
        self.lm_head = nn.Linear(config.hidden_dim, config.vocab, bias=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(ids.shape[1], device=ids.device)
        h = self.embed_tokens(ids) + self.embed_positions(positions)
        for block in self.layers:
            h = block(h)
        return self.lm_head(self.final_norm(h))


def save_tiny(model: TinyDecoder, path) -> None:
    torch.save(
        {"config": asdict(model.config), "state_dict": model.state_dict()},
        path,
    )


def load_tiny(path) -> TinyDecoder:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = TinyDecoder(TinyDecoderConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


def make_reference_checkpoint(path, seed: int = 7,
                              config: TinyDecoderConfig | None = None) -> None:
    """Deterministically build and save the shipped 2-layer checkpoint."""
    torch.manual_seed(seed)
    model = TinyDecoder(config or TinyDecoderConfig())
    save_tiny(model, path)
