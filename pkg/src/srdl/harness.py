"""Training / evaluation / inference / visualization driver."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image, ImageDraw

from . import data as D
from .backbone import build_backbone
from .config import ConfigError, config_digest
from .erasing import ErasureConfig, select_categories
from .graph import LabelVocabulary, init_graph, load_vocabulary, load_word_vectors
from .losses import total_loss_from_logits
from .metrics import MetricsReport, evaluate as evaluate_predictions, write_prediction_dump
from .model import SRDLNet

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingAborted(RuntimeError):
    pass


class CheckpointMismatch(ConfigError):
    pass


# --------------------------------------------------------------------------- construction

def seeds(cfg: dict) -> dict[str, int]:
    """Named seeds derived from the single configured seed."""
    s = cfg["seed"]
    return {"init": s, "data": s + 1}


def augmentation(cfg: dict) -> D.AugmentationConfig:
    a = cfg["augment"]
    return D.AugmentationConfig(
        resize_base=a["resize_base"], crop_scales=tuple(a["crop_scales"]), final_size=a["final_size"],
        hflip_probability=a["hflip_probability"], mean=tuple(a["mean"]), std=tuple(a["std"]),
        crop_mode=a["crop_mode"])


def erasure_config(cfg: dict) -> ErasureConfig:
    return ErasureConfig(alpha=float(cfg["oe"]["alpha"]), topk=int(cfg["oe"]["topk"]))


def build_model(cfg: dict, vocab: LabelVocabulary, word_vectors) -> SRDLNet:
    seed = seeds(cfg)["init"]
    torch.manual_seed(seed)
    b = cfg["backbone"]
    if b["kind"] == "desk":
        backbone = build_backbone("desk", channels=tuple(b["channels"]), bias=b["bias"])
    else:
        backbone = build_backbone("resnet101", weights_path=b["weights"])
    graph = init_graph(vocab, word_vectors, seed, layers=cfg["graph"]["layers"],
                       negative_slope=cfg["graph"]["negative_slope"])
    return SRDLNet(backbone, graph, cfg["car"]["ablations"])


@dataclass
class Dataset:
    vocab: LabelVocabulary
    word_vectors: dict
    train: D.DatasetManifest
    val: D.DatasetManifest | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def image(self, manifest: D.DatasetManifest, i: int) -> np.ndarray:
        path = manifest.image_path(i)
        if path not in self._cache:
            self._cache[path] = D.decode_image(path)
        return self._cache[path]


def load_dataset(cfg: dict) -> Dataset:
    d = cfg["data"]
    for key in ("train_manifest", "vocabulary", "word_vectors"):
        if not d[key]:
            raise ConfigError(f"data.{key}: required")
    vocab = load_vocabulary(d["vocabulary"])
    vectors = load_word_vectors(d["word_vectors"])
    full = D.load_manifest(d["train_manifest"], vocab)
    if d["val_split"] == "hash":
        tr, va = D.split_indices(len(full))
        return Dataset(vocab, vectors, full.subset(tr), full.subset(va))
    val = D.load_manifest(d["val_manifest"], vocab) if d["val_manifest"] else None
    return Dataset(vocab, vectors, full, val)


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(path, cfg, epoch, model, optimizer=None, scheduler=None) -> None:
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "config_digest": config_digest(cfg),
        "config": cfg,
        "epoch": epoch,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer else None,
        "scheduler": scheduler.state_dict() if scheduler else None,
        "rng": {"torch": torch.get_rng_state()},
    }, path)


def load_checkpoint(path, cfg: dict) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported checkpoint format {ckpt.get('format_version')}")
    if ckpt["config_digest"] != config_digest(cfg):
        raise CheckpointMismatch(f"{path}: checkpoint was produced under a different configuration")
    return ckpt


# --------------------------------------------------------------------------- inference path

def predict(model: SRDLNet, dataset: Dataset, manifest: D.DatasetManifest, aug: D.AugmentationConfig,
            batch_size: int = 16) -> np.ndarray:
    """Sigmoid scores ``(N, C)`` through the deterministic evaluation path."""
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(manifest), batch_size):
            idx = range(start, min(start + batch_size, len(manifest)))
            x = torch.stack([D.preprocess_eval(dataset.image(manifest, i), aug) for i in idx])
            out.append(torch.sigmoid(model(x).logits).double().numpy())
    if not out:
        return np.zeros((0, model.num_categories))
    return np.concatenate(out)


def _report(cfg, scores, labels) -> MetricsReport:
    m = cfg["metrics"]
    return evaluate_predictions(scores, labels, rule=m["rule"], threshold=m["threshold"],
                                report_top3=m["report_top3"])


# --------------------------------------------------------------------------- training

@dataclass
class TrainResult:
    steps: list[dict]
    epochs: list[dict]
    checkpoints: list[Path]
    model: SRDLNet


def _jsonl(path: Path, records: Sequence[dict]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def train(cfg: dict, out_dir, resume=None, dataset: Dataset | None = None,
          stop_after_epoch: int | None = None) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = dataset or load_dataset(cfg)
    named = seeds(cfg)
    log.info("seeds: %s", named)
    aug = augmentation(cfg)
    ecfg = erasure_config(cfg)
    o = cfg["optim"]

    model = build_model(cfg, dataset.vocab, dataset.word_vectors)
    opt = torch.optim.Adam(model.parameters(), lr=o["lr"], betas=tuple(o["betas"]),
                           weight_decay=o["weight_decay"])
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=o["lr_step_epochs"], gamma=o["lr_gamma"])
    start_epoch = 0
    if resume is not None:
        ckpt = load_checkpoint(resume, cfg)
        model.load_state_dict(ckpt["model"])
        opt.load_state_dict(ckpt["optimizer"])
        sched.load_state_dict(ckpt["scheduler"])
        torch.set_rng_state(ckpt["rng"]["torch"])
        start_epoch = ckpt["epoch"] + 1

    Y = torch.as_tensor(dataset.train.label_matrix(), dtype=torch.float32)
    N, C = Y.shape
    steps, epochs, ckpts = [], [], []
    step_log_path = out / "oe_steps.jsonl"
    last_epoch = o["epochs"] - 1 if stop_after_epoch is None else min(stop_after_epoch, o["epochs"] - 1)
    for epoch in range(start_epoch, last_epoch + 1):
        model.train()
        order = np.random.default_rng([named["data"], epoch]).permutation(N)
        epoch_steps = []
        for step, start in enumerate(range(0, N, o["batch_size"])):
            idx = order[start:start + o["batch_size"]]
            x = torch.stack([D.augment_train(dataset.image(dataset.train, int(i)), aug,
                                             D.sample_rng(named["data"], epoch, int(i))) for i in idx])
            y = Y[torch.as_tensor(idx)]
            fwd = model(x)
            oe_log = [] if cfg["oe"]["enabled"] and cfg["log"]["step_log"] else None
            erased = model.erased_logits(fwd, ecfg, oe_log) if cfg["oe"]["enabled"] else fwd.logits
            rep = total_loss_from_logits(fwd.logits, erased, y)
            loss = rep.l_total
            if not torch.isfinite(loss):
                dump = out / f"abort_epoch{epoch}_step{step}.pt"
                torch.save({"images": x, "labels": y, "indices": idx, "logits": fwd.logits.detach()}, dump)
                raise TrainingAborted(f"non-finite loss at epoch {epoch} step {step}; batch dumped to {dump}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            count = y.numel()
            rec = {
                "epoch": epoch, "step": step, "lr": opt.param_groups[0]["lr"],
                "l_ori": rep.l_ori.item(), "l_era": rep.l_era.item(), "l_total": loss.item(),
                "l_ori_sum": rep.l_ori.item() * count, "l_era_sum": rep.l_era.item() * count,
            }
            epoch_steps.append(rec)
            if oe_log is not None:
                for entry in oe_log:
                    entry.update(epoch=epoch, step=step, record=int(idx[entry["image"]]))
                _jsonl(step_log_path, oe_log)
        sched.step()
        steps += epoch_steps
        _jsonl(out / "train_log.jsonl", epoch_steps)

        eval_bs = max(o["batch_size"], 16)
        train_scores = predict(model, dataset, dataset.train, aug, eval_bs)
        summary = {"epoch": epoch, "train_mAP": _report(cfg, train_scores, dataset.train.label_matrix()).mAP}
        if dataset.val is not None and len(dataset.val):
            val_scores = predict(model, dataset, dataset.val, aug, eval_bs)
            summary["val_mAP"] = _report(cfg, val_scores, dataset.val.label_matrix()).mAP
        epochs.append(summary)
        _jsonl(out / "epoch_log.jsonl", [summary])
        log.info("epoch %d: %s", epoch, summary)

        path = out / f"checkpoint_epoch{epoch:03d}.pt"
        save_checkpoint(path, cfg, epoch, model, opt, sched)
        ckpts.append(path)
    return TrainResult(steps, epochs, ckpts, model)


# --------------------------------------------------------------------------- evaluation / inference

def load_model(cfg: dict, checkpoint, dataset: Dataset) -> SRDLNet:
    ckpt = load_checkpoint(checkpoint, cfg)
    model = build_model(cfg, dataset.vocab, dataset.word_vectors)
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model


def evaluate(cfg: dict, checkpoint, manifest_path=None, out_dir=None,
             dataset: Dataset | None = None) -> MetricsReport:
    """Score ``manifest_path`` (default: the validation split) and write the
    prediction dump plus report files into ``out_dir``."""
    dataset = dataset or load_dataset(cfg)
    model = load_model(cfg, checkpoint, dataset)
    manifest = D.load_manifest(manifest_path, dataset.vocab) if manifest_path else dataset.val
    if manifest is None:
        raise ConfigError("no manifest to evaluate: pass one or configure a validation split")
    scores = predict(model, dataset, manifest, augmentation(cfg))
    labels = manifest.label_matrix()
    report = _report(cfg, scores, labels)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_prediction_dump(out / "predictions.tsv", dataset.vocab.names,
                              [r[0] for r in manifest.records], scores, labels)
        report.save(out / "metrics")
    return report


def infer(cfg: dict, checkpoint, image_paths: Sequence, out_path=None, dataset: Dataset | None = None):
    """Scores for unlabeled images; writes ``image-id<TAB>C scores`` lines after a header."""
    dataset = dataset or load_dataset(cfg)
    model = load_model(cfg, checkpoint, dataset)
    aug = augmentation(cfg)
    rows = []
    with torch.no_grad():
        for p in image_paths:
            x = D.preprocess_eval(D.decode_image(p), aug)[None]
            rows.append(torch.sigmoid(model(x).logits)[0].double().numpy())
    scores = np.stack(rows) if rows else np.zeros((0, dataset.vocab.C))
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(dataset.vocab.names) + "\n")
            for p, s in zip(image_paths, scores):
                fh.write("\t".join([str(p)] + [repr(float(v)) for v in s]) + "\n")
    return scores


# --------------------------------------------------------------------------- visualization

def _heat_overlay(image: np.ndarray, attention: np.ndarray) -> np.ndarray:
    from matplotlib import colormaps

    H, W = image.shape[:2]
    att = torch.as_tensor(attention, dtype=torch.float64)[None, None]
    up = torch.nn.functional.interpolate(att, size=(H, W), mode="bilinear", align_corners=False)[0, 0].numpy()
    lo, hi = up.min(), up.max()
    up = (up - lo) / (hi - lo) if hi > lo else np.zeros_like(up)
    heat = (colormaps["jet"](up)[..., :3] * 255).astype(np.float64)
    return np.clip(0.5 * image.astype(np.float64) + 0.5 * heat, 0, 255).astype(np.uint8)


def visualize(cfg: dict, checkpoint, image_paths: Sequence, out_dir, top: int = 3,
              dataset: Dataset | None = None) -> list[dict]:
    """Overlay the spatial attention of the ``top`` most confident categories on each image."""
    dataset = dataset or load_dataset(cfg)
    model = load_model(cfg, checkpoint, dataset)
    aug = augmentation(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for p in image_paths:
        p = Path(p)
        try:
            image = D.decode_image(p)
        except Exception as exc:  # undecodable input is skipped, not fatal
            log.warning("skipping %s: %s", p, exc)
            continue
        with torch.no_grad():
            fwd = model(D.preprocess_eval(image, aug)[None])
        probs = torch.sigmoid(fwd.logits[0]).double().numpy()
        spatial = fwd.pair.spatial[0].double().numpy()
        legend = []
        for rank, c in enumerate(select_categories(probs, top)):
            name = dataset.vocab.names[c]
            overlay = Image.fromarray(_heat_overlay(image, spatial[c]))
            ImageDraw.Draw(overlay).text((2, 2), f"{name}: {probs[c]:.3f}", fill=(255, 255, 255))
            fname = f"{p.stem}_top{rank + 1}_{name.replace(' ', '_')}.png"
            overlay.save(out / fname, format="PNG")
            cy, cx = np.unravel_index(np.argmax(spatial[c]), spatial[c].shape)
            legend.append({"rank": rank + 1, "category": name, "score": float(probs[c]), "file": fname,
                           "max_cell": [int(cx), int(cy)], "grid": list(spatial[c].shape)})
        (out / f"{p.stem}_legend.json").write_text(json.dumps(legend, indent=2))
        records.append({"image": str(p), "overlays": legend, "size": list(image.shape[:2])})
    return records


# --------------------------------------------------------------------------- sweep

DEFAULT_TOPKS = tuple(range(1, 9))
DEFAULT_ALPHAS = tuple(round(0.1 * i, 1) for i in range(1, 10))


def run_sweep(cfg: dict, out_dir, topks=DEFAULT_TOPKS, alphas=DEFAULT_ALPHAS,
              dataset: Dataset | None = None) -> dict[str, list[tuple[float, float]]]:
    """Validation mAP vs topK (alpha fixed at 0.5) and vs alpha (topK fixed at 3)."""
    import copy

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = dataset or load_dataset(cfg)
    curves = {"topk": [], "alpha": []}
    settings = [("topk", k, 0.5, k) for k in topks] + [("alpha", a, a, 3) for a in alphas]
    for curve, x, alpha, k in settings:
        run_cfg = copy.deepcopy(cfg)
        run_cfg["oe"].update(enabled=True, alpha=alpha, topk=k)
        run_cfg["log"]["step_log"] = False
        result = train(run_cfg, out / f"{curve}_{x}", dataset=dataset)
        last = result.epochs[-1]
        curves[curve].append((x, last.get("val_mAP", last["train_mAP"])))
    for curve, header in (("topk", "topk"), ("alpha", "alpha")):
        with open(out / f"{curve}_curve.tsv", "w", encoding="utf-8") as fh:
            fh.write(f"{header}\tmAP\n")
            for x, m in curves[curve]:
                fh.write(f"{x}\t{m!r}\n")
    return curves

