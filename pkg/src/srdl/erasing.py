"""Adaptive object erasing on category spatial attention.

Spatial maps handed to ``marginal_profiles`` / ``erase`` are indexed ``[x, y]``
(width first). ``oe_forward`` receives the model's ``(C, h, w)`` maps and does
the transpose itself.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import torch

from .car import AttentionPair, pool_representation


class DegenerateProfile(ValueError):
    """A marginal profile is flat, so min-max normalization is undefined."""


@dataclass(frozen=True)
class ErasureConfig:
    alpha: float = 0.5
    topk: int = 3

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.topk) != self.topk or self.topk < 1:
            raise ValueError(f"topk must be a positive integer, got {self.topk}")


class MarginalProfile(NamedTuple):
    m_x: np.ndarray
    m_y: np.ndarray


class ErasureRegion(NamedTuple):
    x_interval: tuple[int, int]
    y_interval: tuple[int, int]


class ErasedCategory(NamedTuple):
    category: int
    representation: torch.Tensor
    region: ErasureRegion


def _minmax(v: np.ndarray, axis: str) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        raise DegenerateProfile(f"flat {axis} profile (all values {hi})")
    return (v - lo) / (hi - lo)


def marginal_profiles(sa) -> MarginalProfile:
    sa = _as_numpy(sa)
    return MarginalProfile(_minmax(sa.max(axis=1), "x"), _minmax(sa.max(axis=0), "y"))


def select_interval(m, alpha: float) -> tuple[int, int]:
    """Widest maximal run of ``m >= alpha`` that contains a global peak; leftmost on ties."""
    m = np.asarray(m, dtype=np.float64)
    peak = m.max()
    best = None
    i, n = 0, len(m)
    while i < n:
        if m[i] < alpha:
            i += 1
            continue
        j = i
        while j + 1 < n and m[j + 1] >= alpha:
            j += 1
        if (m[i:j + 1] == peak).any() and (best is None or j - i > best[1] - best[0]):
            best = (i, j)
        i = j + 1
    return best


def select_region(sa, alpha: float) -> ErasureRegion:
    prof = marginal_profiles(sa)
    return ErasureRegion(select_interval(prof.m_x, alpha), select_interval(prof.m_y, alpha))


def erasure_mask(shape, region: ErasureRegion, like=None):
    (x0, x1), (y0, y1) = region
    mask = np.ones(shape)
    mask[x0:x1 + 1, y0:y1 + 1] = 0.0
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(mask, dtype=like.dtype, device=like.device)
    return mask


def erase(sa, region: ErasureRegion):
    """Zero the rectangle ``x_interval x y_interval``; everything else is untouched.

    Implemented as a mask product so gradients reach the surviving entries.
    """
    return sa * erasure_mask(sa.shape, region, like=sa)


def select_categories(scores, topk: int) -> list[int]:
    scores = _as_numpy(scores)
    order = np.argsort(-scores, kind="stable")
    return [int(c) for c in order[:min(topk, len(scores))]]


_trace_hooks: list[Callable] = []


def register_trace_hook(fn: Callable) -> Callable[[], None]:
    """Call ``fn(scores, cfg)`` on every ``oe_forward`` entry; returns a remover."""
    _trace_hooks.append(fn)
    return lambda: _trace_hooks.remove(fn)


def oe_forward(fmap: torch.Tensor, pair: AttentionPair, scores, cfg: ErasureConfig) -> list[ErasedCategory]:
    """Erased representations for the top-K categories of one image.

    ``fmap`` is ``(d, h, w)``; ``pair`` holds ``channel (C, d)`` and
    ``spatial (C, h, w)``. Categories with a flat profile are skipped.
    """
    for hook in list(_trace_hooks):
        hook(scores, cfg)
    out = []
    for c in select_categories(scores, cfg.topk):
        sa_xy = pair.spatial[c].transpose(0, 1)
        try:
            region = select_region(sa_xy, cfg.alpha)
        except DegenerateProfile:
            continue
        erased = erase(sa_xy, region).transpose(0, 1)
        fused = 0.5 * fmap * erased[None] + 0.5 * fmap * pair.channel[c][:, None, None]
        out.append(ErasedCategory(c, pool_representation(fused), region))
    return out


def _as_numpy(a) -> np.ndarray:
    if isinstance(a, torch.Tensor):
        a = a.detach().cpu().numpy()
    return np.asarray(a, dtype=np.float64)
