"""Feature extractors returning channels-first maps ``(B, d, h, w)``.

Any ``nn.Module`` exposing ``stride`` and ``out_channels`` attributes can stand
in as the backbone; two are provided: a small CPU-friendly network and a
torchvision ResNet-101 trunk whose weights are supplied externally.
"""
from __future__ import annotations

from typing import Sequence

import torch
from torch import nn


class DeskBackbone(nn.Module):
    """Blocks of conv3x3 -> ReLU -> 2x2 max-pool; stride 2**len(channels)."""

    def __init__(self, channels: Sequence[int] = (16, 32, 48, 64), in_channels: int = 3,
                 bias: bool = True):
        super().__init__()
        layers = []
        prev = in_channels
        for ch in channels:
            layers += [nn.Conv2d(prev, ch, 3, padding=1, bias=bias), nn.ReLU(inplace=True),
                       nn.MaxPool2d(2)]
            prev = ch
        self.body = nn.Sequential(*layers)
        self.stride = 2 ** len(channels)
        self.out_channels = prev

    def forward(self, x):
        return self.body(x)


class ResNetTrunk(nn.Module):
    """ResNet-101 without its pooling/classifier head (stride 32, 2048 channels)."""

    def __init__(self, weights_path: str | None = None):
        super().__init__()
        from torchvision.models import resnet101

        net = resnet101(weights=None)
        if weights_path:
            net.load_state_dict(torch.load(weights_path, map_location="cpu"))
        self.body = nn.Sequential(*list(net.children())[:-2])
        self.stride = 32
        self.out_channels = 2048

    def forward(self, x):
        return self.body(x)


def build_backbone(kind: str = "desk", **kwargs) -> nn.Module:
    if kind == "desk":
        return DeskBackbone(**kwargs)
    if kind == "resnet101":
        return ResNetTrunk(**kwargs)
    raise ValueError(f"unknown backbone kind {kind!r}")


def extract_features(images: torch.Tensor, backbone: nn.Module) -> torch.Tensor:
    stride = backbone.stride
    H, W = images.shape[-2:]
    if H % stride or W % stride:
        raise ValueError(f"input size {H}x{W} is not divisible by the backbone stride {stride}")
    fmap = backbone(images)
    if min(fmap.shape[-2:]) < 2:
        raise ValueError(f"feature map {tuple(fmap.shape[-2:])} too small; need at least 2x2")
    return fmap
