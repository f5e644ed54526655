"""The assembled recognizer: backbone -> label graph -> attention -> classifier,
with object erasing applied on demand during training."""
from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from .backbone import extract_features
from .car import AttentionPair, CarParameters, car_forward, check_ablations
from .erasing import ErasureConfig, oe_forward, select_categories
from .graph import LabelGraph
from .losses import CategoryClassifier, classifier_logits


class ForwardOutput(NamedTuple):
    logits: torch.Tensor          # (B, C)
    pair: AttentionPair           # channel (B, C, d), spatial (B, C, h, w)
    representations: torch.Tensor  # (B, C, d)
    features: torch.Tensor        # (B, d, h, w)


class SRDLNet(nn.Module):
    def __init__(self, backbone: nn.Module, graph: LabelGraph, ablations=()):
        super().__init__()
        self.backbone = backbone
        self.graph = graph
        d = backbone.out_channels
        self.car = CarParameters(d, graph.embedding_dim)
        self.classifier = CategoryClassifier(graph.num_categories, d)
        self.ablations = check_ablations(ablations)

    @property
    def num_categories(self) -> int:
        return self.graph.num_categories

    def embeddings(self) -> torch.Tensor:
        if "no_gcn" in self.ablations:
            return self.graph.node_features
        return self.graph()

    def forward(self, images: torch.Tensor) -> ForwardOutput:
        fmap = extract_features(images, self.backbone)
        emb = self.embeddings().to(fmap.dtype)
        pair, reps = car_forward(fmap, emb, self.car, self.ablations - {"no_gcn"})
        return ForwardOutput(self.classifier(reps), pair, reps, fmap)

    def erased_logits(self, out: ForwardOutput, cfg: ErasureConfig, step_log: list | None = None):
        """Logits where every erased top-K category is rescored from its erased
        representation; all other categories keep their original logit."""
        probs = torch.sigmoid(out.logits.detach())
        rows, cats, reps = [], [], []
        for b in range(out.logits.shape[0]):
            pair_b = AttentionPair(out.pair.channel[b], out.pair.spatial[b])
            erased = oe_forward(out.features[b], pair_b, probs[b], cfg)
            for item in erased:
                rows.append(b)
                cats.append(item.category)
                reps.append(item.representation)
            if step_log is not None:
                selected = select_categories(probs[b], cfg.topk)
                done = {e.category: e.region for e in erased}
                step_log.append({
                    "image": b,
                    "selected": selected,
                    "regions": {str(c): [list(r.x_interval), list(r.y_interval)] for c, r in done.items()},
                    "skipped": [c for c in selected if c not in done],
                })
        if not rows:
            return out.logits
        cat_idx = torch.tensor(cats)
        new = classifier_logits(torch.stack(reps), self.classifier.weight, self.classifier.bias, cat_idx)
        return out.logits.index_put((torch.tensor(rows), cat_idx), new)
