"""Label graph producing contextualized per-category embeddings.

Node features start from averaged word vectors of each category name and are
propagated through ``L`` layers of ``A <- LeakyReLU(softmax_rows(V) @ A @ W)``
with a learnable, unconstrained adjacency ``V``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F


@dataclass(frozen=True)
class LabelVocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise ValueError(f"vocabulary needs at least 2 categories, got {len(names)}")
        seen = set()
        dupes = [n for n in names if n in seen or seen.add(n)]
        if dupes:
            raise ValueError(f"duplicate category names: {dupes}")

    @property
    def C(self) -> int:
        return len(self.names)

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


def load_vocabulary(path) -> LabelVocabulary:
    """One category name per line; blank lines are ignored."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return LabelVocabulary(tuple(line.strip() for line in lines if line.strip()))


def save_vocabulary(vocab: LabelVocabulary, path) -> None:
    Path(path).write_text("".join(n + "\n" for n in vocab.names), encoding="utf-8")


def load_word_vectors(path) -> dict[str, np.ndarray]:
    """Parse a GloVe-style text table: ``token v1 v2 ... vd`` per line."""
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            items = line.rstrip("\n").split(" ")
            items = [it for it in items if it]
            if not items:
                continue
            token, values = items[0], items[1:]
            try:
                vec = np.asarray([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric vector entry") from exc
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
            table[token] = vec
    return table


def save_word_vectors(table: Mapping[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token, vec in table.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def category_embeddings(vocab: LabelVocabulary, table: Mapping[str, np.ndarray]) -> np.ndarray:
    """Average the word vectors of each category's whitespace tokens -> (C, d')."""
    missing = sorted({tok for name in vocab.names for tok in name.split() if tok not in table})
    if missing:
        raise KeyError(f"tokens missing from word-vector table: {missing}")
    rows = [np.mean([table[tok] for tok in name.split()], axis=0) for name in vocab.names]
    return np.stack(rows)


def normalize_adjacency(V: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax, so every row is a stochastic mixing vector."""
    if not torch.isfinite(V).all():
        raise ValueError("adjacency matrix contains non-finite entries")
    return torch.softmax(V, dim=-1)


def gcn_forward(A: torch.Tensor, V: torch.Tensor, weights: Sequence[torch.Tensor],
                negative_slope: float = 0.2) -> torch.Tensor:
    if A.dim() != 2 or V.shape != (A.shape[0], A.shape[0]):
        raise ValueError(f"shape mismatch: node features {tuple(A.shape)}, adjacency {tuple(V.shape)}")
    V_hat = normalize_adjacency(V)
    for l, W in enumerate(weights):
        if W.shape != (A.shape[1], A.shape[1]):
            raise ValueError(f"layer {l}: weight {tuple(W.shape)} incompatible with features {tuple(A.shape)}")
        A = F.leaky_relu(V_hat @ A @ W, negative_slope)
    return A


class LabelGraph(nn.Module):
    """Holds the graph state: fixed initial node features, learnable V and W^l."""

    def __init__(self, node_features: torch.Tensor, layers: int = 2, negative_slope: float = 0.2):
        super().__init__()
        C, dim = node_features.shape
        self.register_buffer("node_features", node_features.clone())
        self.adjacency = nn.Parameter(torch.empty(C, C, dtype=node_features.dtype))
        self.weights = nn.ParameterList(
            [nn.Parameter(torch.empty(dim, dim, dtype=node_features.dtype)) for _ in range(layers)])
        self.negative_slope = negative_slope

    @property
    def num_categories(self) -> int:
        return self.node_features.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.node_features.shape[1]

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        bound = 1.0 / math.sqrt(self.embedding_dim)
        with torch.no_grad():
            self.adjacency.copy_(torch.rand(self.adjacency.shape, generator=gen, dtype=torch.float64))
            for W in self.weights:
                W.copy_(torch.empty(W.shape, dtype=torch.float64).uniform_(-bound, bound, generator=gen))

    def forward(self) -> torch.Tensor:
        return gcn_forward(self.node_features, self.adjacency, list(self.weights), self.negative_slope)


def init_graph(vocab: LabelVocabulary, embedding_source: Mapping[str, np.ndarray], seed: int,
               layers: int = 2, negative_slope: float = 0.2,
               dtype: torch.dtype = torch.float32) -> LabelGraph:
    A0 = torch.as_tensor(category_embeddings(vocab, embedding_source), dtype=dtype)
    graph = LabelGraph(A0, layers=layers, negative_slope=negative_slope)
    graph.reset_parameters(seed)
    return graph
