"""End-to-end orchestration: binarize -> crop -> train -> classify -> evaluate.

Each stage writes into a directory named by a hash of its own configuration
plus its upstream stage's hash, so sweeps re-run only the stages whose inputs
changed. report.json contains no paths or timestamps and is byte-identical
across reruns with the same seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .crop import SubImageRecord, crop_regions
from .mebin import (
    DegenerateHistogramError,
    MebinConfig,
    binarize,
    compute_threshold_range,
    fixed_threshold_binarize,
    otsu_threshold,
)
from .merge import MergeConfig, merge_baselines
from .metrics import clustering_report, detection_rates
from .mgvit import ModelConfig, load_checkpoint, save_checkpoint
from .ncd import TrainConfig, predict_proba, train
from .raster import load_anomaly_map, load_image, load_mask, save_image, save_mask
from .synth import NORMAL_CLASS, SynthConfig, generate, write_corpus

logger = logging.getLogger(__name__)

STAGES = ("corpus", "binarize", "crop", "train", "classify", "evaluate")


class StageError(RuntimeError):
    """Wraps a stage failure with the stage name for machine-readable reports."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# configuration


def train_config_from_dict(raw: dict) -> TrainConfig:
    data = dict(raw)
    if "lambda" in data:  # spec name; `lambda` is reserved in Python
        data["lam"] = data.pop("lambda")
    return TrainConfig(**data)


@dataclass
class PipelineConfig:
    seed: int = 0
    synth: SynthConfig | None = None
    data: dict | None = None
    mebin: MebinConfig = field(default_factory=MebinConfig)
    binarizer: dict = field(default_factory=lambda: {"kind": "mebin"})
    crop: dict = field(default_factory=lambda: {"padding_frac": 0.10, "min_size_frac": 0.01})
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    merge_tau: float = 100.0
    merge_strategy: str = "area"

    def __post_init__(self):
        if self.synth is None and self.data is None:
            raise ValueError("pipeline config needs either a 'synth' or a 'data' section")
        if self.binarizer.get("kind") not in ("mebin", "fixed", "otsu"):
            raise ValueError(f"unknown binarizer {self.binarizer!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        raw = dict(raw)
        seed = int(raw.get("seed", 0))
        synth_cfg = None
        if raw.get("synth") is not None:
            synth_raw = dict(raw["synth"])
            synth_raw.setdefault("seed", seed)
            synth_cfg = SynthConfig(**synth_raw)
        train_raw = dict(raw.get("train", {}))
        train_raw.setdefault("seed", seed)
        return cls(
            seed=seed,
            synth=synth_cfg,
            data=raw.get("data"),
            mebin=MebinConfig(**raw.get("mebin", {})),
            binarizer=dict(raw.get("binarizer", {"kind": "mebin"})),
            crop=dict(raw.get("crop", {"padding_frac": 0.10, "min_size_frac": 0.01})),
            model=dict(raw.get("model", {})),
            train=train_config_from_dict(train_raw),
            merge_tau=float(raw.get("merge_tau", 100.0)),
            merge_strategy=str(raw.get("merge_strategy", "area")),
        )

    def echo(self) -> dict:
        """Path-free configuration echo for reports and hashing."""
        return {
            "seed": self.seed,
            "synth": asdict(self.synth) if self.synth else None,
            "mebin": asdict(self.mebin),
            "binarizer": self.binarizer,
            "crop": self.crop,
            "model": self.model,
            "train": asdict(self.train),
            "merge_tau": self.merge_tau,
            "merge_strategy": self.merge_strategy,
        }


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _stage_hash(payload: dict) -> str:
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()[:12]


def _stage_dir(root: Path, name: str, digest: str) -> Path:
    return root / f"{name}-{digest}"


def _is_done(path: Path) -> bool:
    return (path / ".done").is_file()


def _mark_done(path: Path) -> None:
    (path / ".done").write_text("ok\n")


def _parallel(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# record (de)serialization


def write_records(records: list[SubImageRecord], jsonl_path: Path, subdir_name: str = "subimages") -> None:
    """Write crops.jsonl plus one image/mask PNG pair per record."""
    base = jsonl_path.parent
    subdir = base / subdir_name
    subdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in records:
        stem = f"{rec.image_id}_r{rec.region_index}"
        image_rel = f"{subdir_name}/{stem}.png"
        mask_rel = f"{subdir_name}/{stem}_mask.png"
        save_image(rec.sub_image, base / image_rel)
        save_mask(rec.sub_mask, base / mask_rel)
        rows.append({
            "image_id": rec.image_id,
            "region_index": rec.region_index,
            "image": image_rel,
            "mask": mask_rel,
            "box": list(rec.crop_box),
            "score": rec.anomaly_score,
            "area": rec.area,
            "label": rec.label,
        })
    _write_jsonl(jsonl_path, rows)


def load_records(jsonl_path) -> list[SubImageRecord]:
    jsonl_path = Path(jsonl_path)
    base = jsonl_path.parent
    records = []
    for row in _read_jsonl(jsonl_path):
        records.append(SubImageRecord(
            image_id=row["image_id"],
            region_index=int(row["region_index"]),
            sub_image=load_image(base / row["image"]),
            sub_mask=load_mask(base / row["mask"]),
            anomaly_score=float(row["score"]),
            area=int(row["area"]),
            crop_box=tuple(row["box"]),
            label=row.get("label"),
        ))
    return records


# ---------------------------------------------------------------------------
# class index layout


def class_layout(known_classes, novel_classes) -> dict:
    """Stable class-index layout; the first novel slot is reserved for normal."""
    known = sorted(known_classes)
    novel = sorted(novel_classes)
    if NORMAL_CLASS in novel:
        novel = [NORMAL_CLASS] + [c for c in novel if c != NORMAL_CLASS]
    names = known + novel
    return {
        "known": known,
        "novel": novel,
        "index": {name: i for i, name in enumerate(names)},
        "normal_index": len(known),
    }


# ---------------------------------------------------------------------------
# stage implementations


def _map_path(maps_dir: Path, image_id: str) -> Path:
    for suffix in (".png", ".f32"):
        candidate = maps_dir / f"{image_id}{suffix}"
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"no anomaly map for image {image_id!r} in {maps_dir}")


def run_binarize_stage(maps_dir, image_ids, out_dir, mebin_cfg: MebinConfig,
                       method: dict | None = None, jobs: int = 1) -> dict:
    """Binarize every map and write mask PNGs plus mebin_report.json."""
    maps_dir = Path(maps_dir)
    if not maps_dir.is_dir():
        raise FileNotFoundError(f"maps directory does not exist: {maps_dir}")
    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    method = method or {"kind": "mebin"}
    image_ids = sorted(image_ids)
    maps = _parallel(lambda i: load_anomaly_map(_map_path(maps_dir, i)), image_ids, jobs)

    report: dict = {"method": method["kind"], "images": {}}
    if method["kind"] == "mebin":
        threshold_range = compute_threshold_range(maps)
        report["s_min"], report["s_max"] = threshold_range.s_min, threshold_range.s_max
        results = _parallel(lambda m: binarize(m, threshold_range, mebin_cfg), maps, jobs)
        for image_id, result in zip(image_ids, results):
            save_mask(result.mask, out_dir / "masks" / f"{image_id}.png")
            report["images"][image_id] = {
                "selected_threshold": result.selected_threshold,
                "region_count": result.region_count,
                "per_threshold_counts": result.per_threshold_counts,
            }
    else:
        def run_one(arr):
            if method["kind"] == "fixed":
                eps = float(method["epsilon"])
            else:
                try:
                    eps = otsu_threshold(arr)
                except DegenerateHistogramError:
                    return None, None
            return eps, fixed_threshold_binarize(arr, eps, mebin_cfg)

        for image_id, (eps, mask) in zip(image_ids, _parallel(run_one, maps, jobs)):
            if mask is None:
                mask = np.zeros(maps[0].shape, dtype=np.uint8)
            save_mask(mask, out_dir / "masks" / f"{image_id}.png")
            report["images"][image_id] = {"epsilon": eps}
    _write_json(out_dir / "mebin_report.json", report)
    return report


def run_crop_stage(images_dir, masks_dir, out_jsonl, maps_dir=None, labels: dict | None = None,
                   padding_frac: float = 0.10, min_size_frac: float = 0.01,
                   image_ids=None, jobs: int = 1) -> list[SubImageRecord]:
    """Crop every region of every mask into records and write crops.jsonl."""
    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    for name, path in (("images", images_dir), ("masks", masks_dir)):
        if not path.is_dir():
            raise FileNotFoundError(f"{name} directory does not exist: {path}")
    if image_ids is None:
        image_ids = sorted(p.stem for p in masks_dir.glob("*.png"))
    else:
        image_ids = sorted(image_ids)

    def crop_one(image_id):
        image = load_image(images_dir / f"{image_id}.png")
        mask = load_mask(masks_dir / f"{image_id}.png")
        anomaly_map = None
        if maps_dir is not None:
            anomaly_map = load_anomaly_map(_map_path(Path(maps_dir), image_id))
        recs = crop_regions(image, mask, anomaly_map, padding_frac=padding_frac,
                            min_size_frac=min_size_frac, image_id=image_id)
        if labels and image_id in labels:
            for rec in recs:
                rec.label = int(labels[image_id])
        return recs

    records = [rec for recs in _parallel(crop_one, image_ids, jobs) for rec in recs]
    out_jsonl = Path(out_jsonl)
    out_jsonl.parent.mkdir(parents=True, exist_ok=True)
    write_records(records, out_jsonl)
    return records


def run_train_stage(records, model_cfg: ModelConfig, train_cfg: TrainConfig,
                    ckpt_path, extra: dict | None = None, jobs: int = 1):
    """Train and persist the checkpoint plus per-epoch history.jsonl."""
    torch.set_num_threads(max(1, jobs))
    state = train(records, model_cfg, train_cfg)
    ckpt_path = Path(ckpt_path)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"inference_head": state.inference_head, "tau_s": train_cfg.tau_s}
    payload.update(extra or {})
    save_checkpoint(ckpt_path, state.model, extra=payload)
    _write_jsonl(ckpt_path.parent / "history.jsonl", state.history)
    return state


def run_classify_stage(records, ckpt_path, out_jsonl, merge_cfg: MergeConfig,
                       strategy: str = "area", num_classes: int | None = None,
                       normal_index: int | None = None) -> list[dict]:
    """Per-region class distributions merged to per-image rows."""
    model, extra = load_checkpoint(ckpt_path)
    head = int(extra.get("inference_head", 0))
    tau_s = float(extra.get("tau_s", 0.1))
    rows: list[dict] = []
    if records:
        probs = predict_proba(model, records, head, tau_s)
        by_image: dict[str, list[int]] = {}
        for i, rec in enumerate(records):
            by_image.setdefault(rec.image_id, []).append(i)
        for image_id in sorted(by_image):
            idxs = by_image[image_id]
            preds = [probs[i] for i in idxs]
            areas = [records[i].area for i in idxs]
            scores = [records[i].anomaly_score for i in idxs]
            merged = merge_baselines(preds, areas, scores, strategy=strategy, cfg=merge_cfg)
            rows.append({
                "image_id": image_id,
                "distribution": [float(v) for v in merged],
                "label_index": int(np.argmax(merged)),
                "regions": [{
                    "region_index": records[i].region_index,
                    "distribution": [float(v) for v in probs[i]],
                    "label_index": int(np.argmax(probs[i])),
                    "score": records[i].anomaly_score,
                    "area": records[i].area,
                } for i in idxs],
            })
    meta = {"_meta": {
        "num_classes": num_classes if num_classes is not None else model.cfg.num_classes,
        "normal_index": normal_index if normal_index is not None else model.cfg.num_known_classes,
        "strategy": strategy,
        "tau_alpha": merge_cfg.tau_alpha,
    }}
    out_jsonl = Path(out_jsonl)
    out_jsonl.parent.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out_jsonl, [meta] + rows)
    return rows


def run_evaluate_stage(pred_jsonl, truth_rows, out_json, gt_masks_dir=None,
                       pred_masks_dir=None) -> dict:
    """Image-level clustering metrics against the manifest, plus optional
    region-detection rates from mask directories."""
    rows = _read_jsonl(Path(pred_jsonl))
    if not rows or "_meta" not in rows[0]:
        raise ValueError(f"predictions file lacks a _meta header: {pred_jsonl}")
    meta = rows[0]["_meta"]
    predictions = {row["image_id"]: row for row in rows[1:]}

    truth_rows = [row for row in truth_rows if not row.get("is_labeled", False)]
    if not truth_rows:
        raise ValueError("no unlabeled images in the manifest to evaluate")
    labels_true, labels_pred, missing = [], [], 0
    for row in sorted(truth_rows, key=lambda r: r["image_id"]):
        labels_true.append(row["class"])
        pred = predictions.get(row["image_id"])
        if pred is None:
            # no detected region: the image is predicted as the reserved normal class
            labels_pred.append(int(meta["normal_index"]))
            missing += 1
        else:
            labels_pred.append(int(pred["label_index"]))

    cluster = clustering_report(labels_true, labels_pred)
    report = {
        "clustering": {
            "nmi": cluster.nmi,
            "ari": cluster.ari,
            "f1": cluster.f1,
            "mapping": {str(k): v for k, v in cluster.mapping.items()},
            "confusion": cluster.confusion.tolist(),
            "cluster_ids": [str(c) for c in cluster.cluster_ids],
            "class_ids": [str(c) for c in cluster.class_ids],
        },
        "detection": None,
        "images_evaluated": len(labels_true),
        "images_without_regions": missing,
    }
    if gt_masks_dir is not None and pred_masks_dir is not None:
        ids = sorted(row["image_id"] for row in truth_rows)
        gt = [load_mask(Path(gt_masks_dir) / f"{i}.png") for i in ids]
        pred = [load_mask(Path(pred_masks_dir) / f"{i}.png") for i in ids]
        detection = detection_rates(gt, pred)
        report["detection"] = {"fpr": detection.fpr, "fnr": detection.fnr}
    _write_json(Path(out_json), report)
    return report


# ---------------------------------------------------------------------------
# full pipeline


def _resolve_corpus(cfg: PipelineConfig, stage_root: Path) -> dict:
    """Materialize (synth) or locate (data) the corpus; returns its paths."""
    if cfg.synth is not None:
        digest = _stage_hash({"synth": asdict(cfg.synth)})
        corpus_dir = _stage_dir(stage_root, "corpus", digest)
        if not _is_done(corpus_dir):
            corpus_dir.mkdir(parents=True, exist_ok=True)
            write_corpus(generate(cfg.synth), corpus_dir)
            _mark_done(corpus_dir)
        else:
            logger.info("reusing corpus stage %s", corpus_dir.name)
        base = corpus_dir
        paths = {"images": base / "images", "masks": base / "masks",
                 "maps": base / "maps", "manifest": base / "manifest.jsonl"}
    else:
        data = cfg.data or {}
        paths = {key: Path(data[key]) if key in data and data[key] else None
                 for key in ("images", "masks", "maps", "manifest")}
        if paths["manifest"] is None or not paths["manifest"].is_file():
            raise FileNotFoundError(f"manifest not found: {paths['manifest']}")
        digest = _stage_hash({"data": {k: str(v) for k, v in paths.items()}})
    manifest = _read_jsonl(paths["manifest"])
    known = sorted({row["class"] for row in manifest if row.get("is_labeled")})
    if cfg.synth is not None:
        novel = list(cfg.synth.novel_classes)
    else:
        novel = sorted({row["class"] for row in manifest if not row.get("is_labeled")})
    layout = class_layout(known, novel)
    return {"paths": paths, "manifest": manifest, "layout": layout, "hash": digest}


def run_pipeline(cfg: PipelineConfig, out_dir, jobs: int = 1, stage_root=None) -> dict:
    """Run every stage and write report.json under out_dir.

    ``stage_root`` (defaults to out_dir) holds the content-addressed stage
    directories so sweeps can share unchanged upstream stages.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage_root = Path(stage_root) if stage_root is not None else out_dir
    stage_root.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "resolved_config.json", cfg.echo())
    logger.info("resolved pipeline config: %s", _canonical(cfg.echo()))

    try:
        corpus = _resolve_corpus(cfg, stage_root)
    except Exception as exc:
        raise StageError("corpus", exc) from exc
    paths, manifest, layout = corpus["paths"], corpus["manifest"], corpus["layout"]
    unlabeled_ids = sorted(r["image_id"] for r in manifest if not r.get("is_labeled"))
    labeled_ids = sorted(r["image_id"] for r in manifest if r.get("is_labeled"))
    class_of = {r["image_id"]: r["class"] for r in manifest}

    # binarize unlabeled anomaly maps
    bin_hash = _stage_hash({"parent": corpus["hash"], "mebin": asdict(cfg.mebin),
                            "binarizer": cfg.binarizer})
    bin_dir = _stage_dir(stage_root, "binarize", bin_hash)
    try:
        if not _is_done(bin_dir):
            run_binarize_stage(paths["maps"], unlabeled_ids, bin_dir, cfg.mebin,
                               method=cfg.binarizer, jobs=jobs)
            _mark_done(bin_dir)
        else:
            logger.info("reusing binarize stage %s", bin_dir.name)
    except Exception as exc:
        raise StageError("binarize", exc) from exc

    # crop unlabeled regions (detected masks) and labeled regions (ground truth masks)
    crop_hash = _stage_hash({"parent": bin_hash, "crop": cfg.crop})
    crop_dir = _stage_dir(stage_root, "crop", crop_hash)
    try:
        if not _is_done(crop_dir):
            run_crop_stage(paths["images"], bin_dir / "masks", crop_dir / "crops_unlabeled.jsonl",
                           maps_dir=paths["maps"], image_ids=unlabeled_ids,
                           padding_frac=cfg.crop["padding_frac"],
                           min_size_frac=cfg.crop["min_size_frac"], jobs=jobs)
            labels = {i: layout["index"][class_of[i]] for i in labeled_ids}
            if labeled_ids:
                run_crop_stage(paths["images"], paths["masks"], crop_dir / "crops_labeled.jsonl",
                               maps_dir=None, labels=labels, image_ids=labeled_ids,
                               padding_frac=cfg.crop["padding_frac"],
                               min_size_frac=cfg.crop["min_size_frac"], jobs=jobs)
            else:
                _write_jsonl(crop_dir / "crops_labeled.jsonl", [])
            _write_json(crop_dir / "class_map.json", layout)
            _mark_done(crop_dir)
        else:
            logger.info("reusing crop stage %s", crop_dir.name)
        records = load_records(crop_dir / "crops_unlabeled.jsonl")
        records += load_records(crop_dir / "crops_labeled.jsonl")
    except Exception as exc:
        raise StageError("crop", exc) from exc

    # train
    model_cfg = ModelConfig(**{**cfg.model,
                               "num_known_classes": len(layout["known"]),
                               "num_novel_classes": len(layout["novel"])})
    train_hash = _stage_hash({"parent": crop_hash, "model": asdict(model_cfg),
                              "train": asdict(cfg.train)})
    train_dir = _stage_dir(stage_root, "train", train_hash)
    ckpt_path = train_dir / "model.ckpt"
    try:
        if not _is_done(train_dir):
            run_train_stage(records, model_cfg, cfg.train, ckpt_path,
                            extra={"class_map": layout}, jobs=jobs)
            _mark_done(train_dir)
        else:
            logger.info("reusing train stage %s", train_dir.name)
    except Exception as exc:
        raise StageError("train", exc) from exc

    # classify + merge
    classify_hash = _stage_hash({"parent": train_hash, "merge_tau": cfg.merge_tau,
                                 "strategy": cfg.merge_strategy})
    classify_dir = _stage_dir(stage_root, "classify", classify_hash)
    pred_jsonl = classify_dir / "predictions.jsonl"
    try:
        if not _is_done(classify_dir):
            unlabeled_records = load_records(crop_dir / "crops_unlabeled.jsonl")
            run_classify_stage(unlabeled_records, ckpt_path, pred_jsonl,
                               MergeConfig(tau_alpha=cfg.merge_tau), strategy=cfg.merge_strategy,
                               num_classes=model_cfg.num_classes,
                               normal_index=layout["normal_index"])
            _mark_done(classify_dir)
        else:
            logger.info("reusing classify stage %s", classify_dir.name)
    except Exception as exc:
        raise StageError("classify", exc) from exc

    # evaluate
    try:
        report = run_evaluate_stage(pred_jsonl, manifest, out_dir / "report.json",
                                    gt_masks_dir=paths["masks"],
                                    pred_masks_dir=bin_dir / "masks")
        history = _read_jsonl(train_dir / "history.jsonl")
        report["training"] = {
            "epochs": len(history),
            "first_epoch_loss": history[0]["loss_total"],
            "final_epoch_loss": history[-1]["loss_total"],
        }
        report["seed"] = cfg.seed
        report["config"] = cfg.echo()
        _write_json(out_dir / "report.json", report)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("evaluate", exc) from exc
    return report


# ---------------------------------------------------------------------------
# ablation sweeps

SWEEP_AXES = ("fixed-threshold", "L_m", "merge-strategy", "plc-threshold", "mask-target")


def _axis_variants(raw_cfg: dict, axis: str) -> list[tuple[str, dict]]:
    def with_override(path: list[str], value):
        cfg = json.loads(json.dumps(raw_cfg))
        node = cfg
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
        return cfg

    if axis == "fixed-threshold":
        variants = [(f"eps={eps}", with_override(["binarizer"], {"kind": "fixed", "epsilon": eps}))
                    for eps in (0.1, 0.3, 0.5, 0.7, 0.9)]
        variants.append(("otsu", with_override(["binarizer"], {"kind": "otsu"})))
        variants.append(("mebin", with_override(["binarizer"], {"kind": "mebin"})))
        return variants
    if axis == "L_m":
        layers = int(raw_cfg.get("model", {}).get("num_layers", ModelConfig().num_layers))
        values = sorted({1, -(-layers // 4), -(-layers // 2), -(-3 * layers // 4), layers})
        return [(f"L_m={v}", with_override(["model", "masked_layers"], v)) for v in values]
    if axis == "merge-strategy":
        return [(name, with_override(["merge_strategy"], name)) for name in ("avg", "score", "area")]
    if axis == "plc-threshold":
        return [(f"plc={v}", with_override(["train", "plc_threshold"], v))
                for v in (0.1, 0.3, 0.5, 0.7, 0.9)]
    if axis == "mask-target":
        variants = [("no-mask", with_override(["model", "masked_layers"], 0))]
        for target in ("all", "patch", "cls"):
            variants.append((target, with_override(["model", "mask_target"], target)))
        return variants
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def run_sweep(raw_cfg: dict, axis: str, out_dir, jobs: int = 1) -> list[dict]:
    """Run the pipeline once per axis value, sharing unchanged stages."""
    out_dir = Path(out_dir)
    stage_root = out_dir / "stages"
    rows = []
    for name, variant_raw in _axis_variants(raw_cfg, axis):
        cfg = PipelineConfig.from_dict(variant_raw)
        variant_dir = out_dir / "variants" / name.replace("=", "_")
        report = run_pipeline(cfg, variant_dir, jobs=jobs, stage_root=stage_root)
        detection = report.get("detection") or {}
        rows.append({
            "variant": name,
            "fpr": detection.get("fpr"),
            "fnr": detection.get("fnr"),
            "nmi": report["clustering"]["nmi"],
            "ari": report["clustering"]["ari"],
            "f1": report["clustering"]["f1"],
        })
    _write_json(out_dir / "sweep.json", {"axis": axis, "rows": rows})
    header = ["variant", "fpr", "fnr", "nmi", "ari", "f1"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join("" if row[k] is None else str(row[k]) for k in header))
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    return rows
