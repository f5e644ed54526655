"""Per-category linear classifier and the two-term binary cross-entropy."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

EPS = 1e-12


class CategoryClassifier(nn.Module):
    """One weight row and bias per category: ``logit_c = w_c . f_c + b_c``."""

    def __init__(self, num_categories: int, feat_dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(num_categories, feat_dim))
        self.bias = nn.Parameter(torch.zeros(num_categories))
        nn.init.uniform_(self.weight, -1 / math.sqrt(feat_dim), 1 / math.sqrt(feat_dim))

    def forward(self, reps: torch.Tensor) -> torch.Tensor:
        return classifier_logits(reps, self.weight, self.bias)


def classifier_logits(reps, weight, bias, categories=None):
    """``reps`` is ``(..., C, d)``; with ``categories`` given, ``reps`` is ``(n, d)``
    and row i is scored by the classifier of ``categories[i]``."""
    if categories is not None:
        return (reps * weight[categories]).sum(-1) + bias[categories]
    if reps.shape[-2:] != weight.shape:
        raise ValueError(f"representations {tuple(reps.shape)} do not match classifier {tuple(weight.shape)}")
    return (reps * weight).sum(-1) + bias


def classify(reps, params: CategoryClassifier):
    return torch.sigmoid(params(reps))


def bce(p, y):
    """Mean binary cross-entropy over categories (and batch), logs clamped at 1e-12."""
    if torch.isnan(p).any():
        raise ValueError("NaN in predicted probabilities")
    y = y.to(p.dtype)
    logp = torch.log(p.clamp(min=EPS))
    log1mp = torch.log((1 - p).clamp(min=EPS))
    return -(y * logp + (1 - y) * log1mp).mean()


def bce_with_logits(logits, y):
    return F.binary_cross_entropy_with_logits(logits, y.to(logits.dtype))


@dataclass
class LossReport:
    l_ori: torch.Tensor
    l_era: torch.Tensor

    @property
    def l_total(self) -> torch.Tensor:
        return self.l_ori + self.l_era


def total_loss(p, p_hat, y) -> LossReport:
    return LossReport(bce(p, y), bce(p_hat, y))


def total_loss_from_logits(logits, erased_logits, y) -> LossReport:
    """Stable training-time equivalent of ``total_loss``."""
    l_ori = bce_with_logits(logits, y)
    if erased_logits is logits:
        return LossReport(l_ori, l_ori)
    return LossReport(l_ori, bce_with_logits(erased_logits, y))
