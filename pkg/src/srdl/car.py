"""Category-specific channel and spatial attention.

Layout conventions: feature maps are ``(B, d, h, w)``, embeddings ``(C, d')``,
channel attention ``(B, C, d)``, spatial attention ``(B, C, h, w)``, fused maps
``(B, C, d, h, w)`` and pooled representations ``(B, C, d)``.
"""
from __future__ import annotations

from typing import Iterable, NamedTuple

import torch
from torch import nn

ABLATIONS = frozenset({"no_gcn", "no_ca", "no_sa"})


class AttentionPair(NamedTuple):
    channel: torch.Tensor
    spatial: torch.Tensor


class CarParameters(nn.Module):
    """The five projections shared by every category."""

    def __init__(self, feat_dim: int, embed_dim: int):
        super().__init__()
        self.f_ca = nn.Linear(feat_dim, feat_dim)
        self.f_sa = nn.Linear(feat_dim, feat_dim)
        self.f_w = nn.Linear(embed_dim, feat_dim)
        self.f_c = nn.Linear(feat_dim, feat_dim)
        self.f_s = nn.Linear(feat_dim, 1)


def global_max_pool(fmap: torch.Tensor) -> torch.Tensor:
    return fmap.amax(dim=(-2, -1))


def channel_attention(fmap, embeddings, params: CarParameters):
    pooled = params.f_ca(global_max_pool(fmap))                       # (B, d)
    gate = params.f_w(embeddings)                                     # (C, d)
    return torch.sigmoid(params.f_c(torch.tanh(pooled[:, None, :] * gate[None])))


def spatial_attention(fmap, embeddings, params: CarParameters):
    local = params.f_sa(fmap.permute(0, 2, 3, 1))                     # (B, h, w, d)
    gate = params.f_w(embeddings)                                     # (C, d)
    mixed = torch.tanh(local[:, None] * gate[None, :, None, None, :])  # (B, C, h, w, d)
    return torch.sigmoid(params.f_s(mixed).squeeze(-1))


def fuse(fmap, pair: AttentionPair):
    F_ = fmap[:, None]                                                # (B, 1, d, h, w)
    return 0.5 * F_ * pair.spatial[:, :, None] + 0.5 * F_ * pair.channel[..., None, None]


def pool_representation(fused):
    return global_max_pool(fused)


def check_ablations(ablations: Iterable[str]) -> frozenset[str]:
    flags = frozenset(ablations)
    unknown = flags - ABLATIONS
    if unknown:
        raise ValueError(f"unknown ablation flag(s) {sorted(unknown)}; known: {sorted(ABLATIONS)}")
    return flags


def car_forward(fmap, embeddings, params: CarParameters, ablations=(), raw_embeddings=None):
    """Attention pair and pooled representation for every category.

    ``no_gcn`` swaps ``embeddings`` for ``raw_embeddings`` (the word vectors the
    graph would have started from); ``no_ca`` / ``no_sa`` pin the respective
    attention to ones.
    """
    flags = check_ablations(ablations)
    if "no_gcn" in flags:
        if raw_embeddings is None:
            raise ValueError("ablation 'no_gcn' needs raw_embeddings")
        embeddings = raw_embeddings
    B, d, h, w = fmap.shape
    C = embeddings.shape[0]
    if "no_ca" in flags:
        channel = fmap.new_ones(B, C, d)
    else:
        channel = channel_attention(fmap, embeddings, params)
    if "no_sa" in flags:
        spatial = fmap.new_ones(B, C, h, w)
    else:
        spatial = spatial_attention(fmap, embeddings, params)
    pair = AttentionPair(channel, spatial)
    return pair, pool_representation(fuse(fmap, pair))
