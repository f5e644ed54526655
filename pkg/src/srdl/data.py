"""Dataset manifests, train/eval preprocessing and a synthetic shapes generator."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, ImageDraw

from .graph import LabelVocabulary, save_vocabulary, save_word_vectors

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


# --------------------------------------------------------------------------- manifests

@dataclass
class DatasetManifest:
    records: list[tuple[str, list[str]]]
    vocabulary: LabelVocabulary
    root: Path = Path(".")

    def __len__(self):
        return len(self.records)

    def label_matrix(self) -> np.ndarray:
        Y = np.zeros((len(self.records), self.vocabulary.C), dtype=np.int64)
        for i, (_, names) in enumerate(self.records):
            for n in names:
                Y[i, self.vocabulary.index(n)] = 1
        return Y

    def image_path(self, i: int) -> Path:
        return self.root / self.records[i][0]

    def subset(self, indices: Sequence[int]) -> "DatasetManifest":
        return DatasetManifest([self.records[i] for i in indices], self.vocabulary, self.root)


def load_manifest(path, vocabulary: LabelVocabulary, check_paths: bool = True) -> DatasetManifest:
    """Parse ``relative/path<TAB>cat1,cat2,...`` lines; paths resolve against the file's directory."""
    path = Path(path)
    root = path.parent
    known = set(vocabulary.names)
    records, seen = [], set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rel, _, cats = line.partition("\t")
        names = [c.strip() for c in cats.split(",") if c.strip()]
        unknown = [n for n in names if n not in known]
        if unknown:
            raise ValueError(f"{path}:{lineno}: unknown category {unknown[0]!r}")
        deduped = list(dict.fromkeys(names))
        if len(deduped) != len(names):
            log.warning("%s:%d: duplicated category names removed", path, lineno)
        if rel in seen:
            log.warning("%s:%d: duplicate image path %s", path, lineno, rel)
        seen.add(rel)
        if check_paths and not (root / rel).exists():
            raise FileNotFoundError(f"{path}:{lineno}: image {root / rel} does not exist")
        records.append((rel, deduped))
    return DatasetManifest(records, vocabulary, root)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rel, names in manifest.records:
            fh.write(f"{rel}\t{','.join(names)}\n")


def split_indices(n: int, val_fraction_denominator: int = 5) -> tuple[list[int], list[int]]:
    """Deterministic ~80/20 split keyed on a hash of the record index."""
    train, val = [], []
    for i in range(n):
        h = int.from_bytes(hashlib.sha256(str(i).encode()).digest()[:8], "big")
        (val if h % val_fraction_denominator == 0 else train).append(i)
    return train, val


def decode_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


# --------------------------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class AugmentationConfig:
    resize_base: int = 512
    crop_scales: tuple[int, ...] = (512, 448, 384, 320, 256)
    final_size: int = 448
    hflip_probability: float = 0.5
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    crop_mode: str = "independent"  # or "single": one draw for both sides

    def __post_init__(self):
        object.__setattr__(self, "crop_scales", tuple(int(s) for s in self.crop_scales))
        if self.final_size <= 0:
            raise ValueError("final_size must be positive")
        if not self.crop_scales or max(self.crop_scales) > self.resize_base or min(self.crop_scales) < 1:
            raise ValueError("crop scales must lie in [1, resize_base]")
        if not 0.0 <= self.hflip_probability <= 1.0:
            raise ValueError("hflip_probability must lie in [0, 1]")
        if self.crop_mode not in ("independent", "single"):
            raise ValueError(f"unknown crop_mode {self.crop_mode!r}")


def _to_tensor(image) -> torch.Tensor:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ValueError(f"image {arr.shape[1]}x{arr.shape[0]} is smaller than 2x2")
    t = torch.from_numpy(np.array(arr, copy=True)).permute(2, 0, 1).to(torch.float32)
    return t / 255.0 if arr.dtype == np.uint8 else t


def _resize(t: torch.Tensor, h: int, w: int) -> torch.Tensor:
    if t.shape[-2:] == (h, w):
        return t
    return F.interpolate(t[None], size=(h, w), mode="bilinear", align_corners=False)[0]


def _normalize(t: torch.Tensor, cfg: AugmentationConfig) -> torch.Tensor:
    mean = torch.tensor(cfg.mean, dtype=t.dtype)[:, None, None]
    std = torch.tensor(cfg.std, dtype=t.dtype)[:, None, None]
    return (t - mean) / std


def augment_train(image, cfg: AugmentationConfig, rng: np.random.Generator, record: dict | None = None):
    """Resize, random-scale crop, resize, random horizontal flip, normalize.

    ``record``, if given, receives the sampled crop box and flip decision.
    """
    t = _resize(_to_tensor(image), cfg.resize_base, cfg.resize_base)
    cw = int(rng.choice(cfg.crop_scales))
    ch = cw if cfg.crop_mode == "single" else int(rng.choice(cfg.crop_scales))
    x0 = int(rng.integers(0, cfg.resize_base - cw + 1))
    y0 = int(rng.integers(0, cfg.resize_base - ch + 1))
    t = _resize(t[:, y0:y0 + ch, x0:x0 + cw], cfg.final_size, cfg.final_size)
    flip = bool(rng.random() < cfg.hflip_probability)
    if flip:
        t = t.flip(-1)
    if record is not None:
        record.update(crop=(x0, y0, cw, ch), flip=flip)
    return _normalize(t, cfg)


def preprocess_eval(image, cfg: AugmentationConfig) -> torch.Tensor:
    return _normalize(_resize(_to_tensor(image), cfg.final_size, cfg.final_size), cfg)


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample generator; independent of worker count and iteration order."""
    return np.random.default_rng([seed, epoch, index])


# --------------------------------------------------------------------------- synthetic data

SHAPES = ("square", "circle", "triangle", "diamond", "cross", "ring", "bar", "star")
COLORS = {
    "red": (220, 40, 40), "green": (40, 180, 60), "blue": (40, 80, 220), "yellow": (230, 210, 40),
    "magenta": (200, 50, 200), "cyan": (40, 200, 210), "orange": (240, 140, 30), "white": (245, 245, 245),
    "purple": (110, 40, 160), "brown": (130, 80, 30),
}


@dataclass
class SyntheticSpec:
    """``cooccurrence[i, j]`` is the probability that category j appears in an
    image whose anchor category is i; the anchor itself always appears, so the
    diagonal must be 1."""

    num_categories: int = 8
    num_images: int = 200
    image_size: int = 64
    cooccurrence: np.ndarray | None = None
    occlusion_rate: float = 0.3
    object_size: tuple[int, int] = (16, 24)
    background: tuple[int, int, int] = (0, 0, 0)
    seed: int = 0
    assignments: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        for name in ("num_categories", "num_images", "image_size", "seed"):
            if not isinstance(getattr(self, name), int) or isinstance(getattr(self, name), bool):
                raise ValueError(f"{name} must be an integer, got {getattr(self, name)!r}")
        C = self.num_categories
        if C < 2:
            raise ValueError("num_categories must be at least 2")
        if self.cooccurrence is None:
            self.cooccurrence = np.eye(C)
        self.cooccurrence = np.asarray(self.cooccurrence, dtype=np.float64)
        M = self.cooccurrence
        if M.shape != (C, C):
            raise ValueError(f"cooccurrence must be {C}x{C}, got {M.shape}")
        if not ((M >= 0) & (M <= 1)).all():
            raise ValueError("cooccurrence entries must be probabilities in [0, 1]")
        if not np.allclose(np.diag(M), 1.0):
            raise ValueError("inconsistent marginals: the anchor category (diagonal) must have inclusion probability 1")
        if not 0.0 <= self.occlusion_rate <= 1.0:
            raise ValueError("occlusion_rate must lie in [0, 1]")
        lo, hi = self.object_size
        if not 2 <= lo <= hi <= self.image_size // 2:
            raise ValueError("object_size must satisfy 2 <= min <= max <= image_size / 2")
        if not self.assignments:
            colors = list(COLORS)
            self.assignments = [(colors[i % len(colors)], SHAPES[i % len(SHAPES)]) for i in range(C)]
        if len(set(self.assignments)) != C or len(self.assignments) != C:
            raise ValueError("shape/color assignments must be injective over categories")

    @property
    def category_names(self) -> list[str]:
        return [f"{color} {shape}" for color, shape in self.assignments]

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {"num_categories", "num_images", "image_size", "cooccurrence", "occlusion_rate",
                 "object_size", "background", "seed", "assignments", "linked_pairs", "link_strength",
                 "base_rate"}
        for k in d:
            if k not in known:
                raise KeyError(k)
        d = dict(d)
        pairs = d.pop("linked_pairs", None)
        strength = d.pop("link_strength", 0.9)
        base = d.pop("base_rate", 0.1)
        if d.get("cooccurrence") is None and pairs is not None:
            d["cooccurrence"] = linked_pairs_matrix(d.get("num_categories", 8), pairs, strength, base)
        if "assignments" in d:
            d["assignments"] = [tuple(a) for a in d["assignments"]]
        if "object_size" in d:
            d["object_size"] = tuple(d["object_size"])
        if "background" in d:
            d["background"] = tuple(d["background"])
        return cls(**d)


def linked_pairs_matrix(C: int, pairs, strength: float = 0.9, base: float = 0.1) -> np.ndarray:
    M = np.full((C, C), base)
    np.fill_diagonal(M, 1.0)
    for i, j in pairs:
        M[i, j] = M[j, i] = strength
    return M


@dataclass
class ObjectRegion:
    image_id: str
    category: str
    box: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive pixel coords
    occluded: bool = False


@dataclass
class SyntheticDataset:
    manifest: DatasetManifest
    regions: list[ObjectRegion]
    images: list[np.ndarray]
    anchors: np.ndarray
    word_vectors: dict[str, np.ndarray]

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        for (rel, _), img in zip(self.manifest.records, self.images):
            Image.fromarray(img).save(out / rel, format="PNG")
        write_manifest(self.manifest, out / "manifest.tsv")
        save_vocabulary(self.manifest.vocabulary, out / "vocabulary.txt")
        save_word_vectors(self.word_vectors, out / "word_vectors.txt")
        write_regions(self.regions, out / "regions.tsv")
        np.savetxt(out / "anchors.txt", self.anchors, fmt="%d")


def write_regions(regions: Sequence[ObjectRegion], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in regions:
            fh.write(f"{r.image_id}\t{r.category}\t{','.join(map(str, r.box))}\n")


def read_regions(path) -> list[ObjectRegion]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            image_id, cat, box = line.split("\t")
            out.append(ObjectRegion(image_id, cat, tuple(int(v) for v in box.split(","))))
    return out


def _draw_shape(draw: ImageDraw.ImageDraw, shape: str, box, color):
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    w, h = x1 - x0, y1 - y0
    if shape == "square":
        draw.rectangle(box, fill=color)
    elif shape == "circle":
        draw.ellipse(box, fill=color)
    elif shape == "triangle":
        draw.polygon([(cx, y0), (x1, y1), (x0, y1)], fill=color)
    elif shape == "diamond":
        draw.polygon([(cx, y0), (x1, cy), (cx, y1), (x0, cy)], fill=color)
    elif shape == "cross":
        draw.rectangle((x0, cy - h / 6, x1, cy + h / 6), fill=color)
        draw.rectangle((cx - w / 6, y0, cx + w / 6, y1), fill=color)
    elif shape == "ring":
        draw.ellipse(box, outline=color, width=max(2, int(w // 5)))
    elif shape == "bar":
        draw.rectangle((x0, cy - h / 5, x1, cy + h / 5), fill=color)
    elif shape == "star":
        pts = []
        for k in range(10):
            r = (w / 2) if k % 2 == 0 else (w / 5)
            a = np.pi / 2 + k * np.pi / 5
            pts.append((cx + r * np.cos(a), cy - r * np.sin(a)))
        draw.polygon(pts, fill=color)
    else:
        raise ValueError(f"unknown shape {shape!r}")


def _overlap(a, b) -> bool:
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


def sample_labels(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    C = spec.num_categories
    anchors = rng.integers(0, C, size=spec.num_images)
    Y = (rng.random((spec.num_images, C)) < spec.cooccurrence[anchors]).astype(np.int64)
    Y[np.arange(spec.num_images), anchors] = 1
    return Y, anchors


def generate_synthetic(spec: SyntheticSpec, embedding_dim: int = 16) -> SyntheticDataset:
    """Render images of colored shapes whose label sets follow ``spec.cooccurrence``.

    Objects are placed without overlap except that, with probability
    ``occlusion_rate``, a newly drawn object is placed across an earlier one.
    """
    rng = np.random.default_rng(spec.seed)
    Y, anchors = sample_labels(spec, rng)
    vocab = LabelVocabulary(tuple(spec.category_names))
    S = spec.image_size
    lo, hi = spec.object_size
    records, regions, images = [], [], []
    for n in range(spec.num_images):
        image_id = f"img_{n:05d}"
        img = Image.new("RGB", (S, S), spec.background)
        draw = ImageDraw.Draw(img)
        cats = [int(c) for c in rng.permutation(np.flatnonzero(Y[n]))]
        placed: list[list] = []
        for c in cats:
            size = int(rng.integers(lo, hi + 1))
            box = None
            if placed and rng.random() < spec.occlusion_rate:
                target = placed[int(rng.integers(len(placed)))]
                tx0, ty0, tx1, ty1 = target[1]
                ox = int(rng.integers(-size // 2, size // 2 + 1))
                oy = int(rng.integers(-size // 2, size // 2 + 1))
                bx = int(np.clip((tx0 + tx1) // 2 + ox, 0, S - size))
                by = int(np.clip((ty0 + ty1) // 2 + oy, 0, S - size))
                box = (bx, by, bx + size - 1, by + size - 1)
                target[2] = True
            else:
                for _ in range(50):
                    bx, by = (int(v) for v in rng.integers(0, S - size + 1, size=2))
                    cand = (bx, by, bx + size - 1, by + size - 1)
                    if not any(_overlap(cand, p[1]) for p in placed):
                        box = cand
                        break
                if box is None:
                    box = cand
            color, shape = spec.assignments[c]
            _draw_shape(draw, shape, box, COLORS[color])
            placed.append([c, box, False])
        for c, box, occluded in placed:
            regions.append(ObjectRegion(image_id, vocab.names[c], box, occluded))
        records.append((f"images/{image_id}.png", [vocab.names[c] for c in sorted(cats)]))
        images.append(np.asarray(img, dtype=np.uint8))
    vec_rng = np.random.default_rng([spec.seed, 1])
    tokens = dict.fromkeys(tok for name in vocab.names for tok in name.split())
    word_vectors = {tok: vec_rng.normal(0, 0.5, embedding_dim) for tok in tokens}
    return SyntheticDataset(DatasetManifest(records, vocab), regions, images, anchors, word_vectors)
