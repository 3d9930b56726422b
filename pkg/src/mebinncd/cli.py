"""Command-line interface. Set MEBINNCD_LOG=DEBUG|INFO|... for verbosity."""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from .mebin import MebinConfig
from .merge import STRATEGIES, MergeConfig
from .mgvit import ModelConfig, inspect_checkpoint
from .pipeline import (
    SWEEP_AXES,
    PipelineConfig,
    StageError,
    load_records,
    run_binarize_stage,
    run_classify_stage,
    run_crop_stage,
    run_evaluate_stage,
    run_pipeline,
    run_sweep,
    run_train_stage,
    train_config_from_dict,
    _read_jsonl,
    _write_json,
)
from .synth import SynthConfig, generate, write_corpus


def _setup_logging() -> None:
    level = os.environ.get("MEBINNCD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


@click.group()
def main():
    """Anomaly-map binarization, region classification, and evaluation toolkit."""
    _setup_logging()


@main.command("synth")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="SynthConfig JSON")
@click.option("--out", "out_dir", required=True, type=click.Path())
def synth_cmd(config_path, out_dir):
    """Generate a synthetic corpus (images/, masks/, maps/, manifest.jsonl)."""
    cfg = SynthConfig(**_load_json(config_path))
    write_corpus(generate(cfg), out_dir)
    click.echo(f"corpus written to {out_dir}")


@main.command("binarize")
@click.option("--maps", "maps_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--T", "-T", "num_thresholds", default=64, show_default=True)
@click.option("--tau", default=4, show_default=True, help="Minimum stable run length")
@click.option("--erosion", default=1, show_default=True)
@click.option("--connectivity", default=8, show_default=True, type=click.Choice(["4", "8"]))
@click.option("--method", default="mebin", show_default=True,
              type=click.Choice(["mebin", "fixed", "otsu"]))
@click.option("--epsilon", default=0.5, show_default=True, help="Threshold for --method fixed")
@click.option("--jobs", default=1, show_default=True)
def binarize_cmd(maps_dir, out_dir, num_thresholds, tau, erosion, connectivity,
                 method, epsilon, jobs):
    """Binarize every anomaly map in --maps into mask PNGs plus a report."""
    maps_dir = Path(maps_dir)
    if not maps_dir.is_dir():
        raise click.ClickException(f"maps directory does not exist: {maps_dir}")
    image_ids = sorted({p.stem for p in maps_dir.iterdir() if p.suffix in (".png", ".f32")})
    if not image_ids:
        raise click.ClickException(f"no .png or .f32 maps found in {maps_dir}")
    cfg = MebinConfig(num_thresholds=num_thresholds, min_stable_run=tau,
                      erosion_radius=erosion, connectivity=int(connectivity))
    method_cfg = {"kind": method}
    if method == "fixed":
        method_cfg["epsilon"] = epsilon
    run_binarize_stage(maps_dir, image_ids, out_dir, cfg, method=method_cfg, jobs=jobs)
    click.echo(f"{len(image_ids)} masks written to {out_dir}")


@main.command("crop")
@click.option("--images", "images_dir", required=True, type=click.Path())
@click.option("--masks", "masks_dir", required=True, type=click.Path())
@click.option("--maps", "maps_dir", default=None, type=click.Path(),
              help="Optional anomaly maps for per-region scores")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--labels", "labels_path", default=None, type=click.Path(exists=True),
              help="JSON mapping image_id to class index for labeled data")
@click.option("--padding", default=0.10, show_default=True)
@click.option("--min-size", default=0.01, show_default=True)
@click.option("--jobs", default=1, show_default=True)
def crop_cmd(images_dir, masks_dir, maps_dir, out_dir, labels_path, padding, min_size, jobs):
    """Crop each mask region into sub-image/sub-mask pairs plus crops.jsonl."""
    labels = _load_json(labels_path) if labels_path else None
    records = run_crop_stage(images_dir, masks_dir, Path(out_dir) / "crops.jsonl",
                             maps_dir=maps_dir, labels=labels,
                             padding_frac=padding, min_size_frac=min_size, jobs=jobs)
    click.echo(f"{len(records)} regions written to {out_dir}/crops.jsonl")


@main.command("train")
@click.option("--crops", "crops_path", required=True, type=click.Path(exists=True),
              help="Unlabeled crops jsonl")
@click.option("--labeled", "labeled_path", default=None, type=click.Path(exists=True),
              help="Labeled crops jsonl")
@click.option("--model-cfg", "model_cfg_path", default=None, type=click.Path(exists=True))
@click.option("--train-cfg", "train_cfg_path", default=None, type=click.Path(exists=True))
@click.option("--out", "ckpt_path", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True)
def train_cmd(crops_path, labeled_path, model_cfg_path, train_cfg_path, ckpt_path, jobs):
    """Train the classifier; history.jsonl lands next to the checkpoint."""
    records = load_records(crops_path)
    if labeled_path:
        records += load_records(labeled_path)
    model_cfg = ModelConfig(**_load_json(model_cfg_path)) if model_cfg_path else ModelConfig()
    train_cfg = train_config_from_dict(_load_json(train_cfg_path)) if train_cfg_path else None
    from .ncd import TrainConfig

    state = run_train_stage(records, model_cfg, train_cfg or TrainConfig(), ckpt_path, jobs=jobs)
    click.echo(f"checkpoint written to {ckpt_path} "
               f"(inference head {state.inference_head}, "
               f"final loss {state.history[-1]['loss_total']:.4f})")


@main.command("classify")
@click.option("--crops", "crops_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--merge-tau", default=100.0, show_default=True)
@click.option("--strategy", default="area", show_default=True, type=click.Choice(STRATEGIES))
def classify_cmd(crops_path, ckpt_path, out_path, merge_tau, strategy):
    """Classify crops and merge region predictions per image."""
    records = load_records(crops_path)
    rows = run_classify_stage(records, ckpt_path, out_path,
                              MergeConfig(tau_alpha=merge_tau), strategy=strategy)
    click.echo(f"{len(rows)} image predictions written to {out_path}")


@main.command("evaluate")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True),
              help="Manifest jsonl with image_id/class rows")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--gt-masks", default=None, type=click.Path(),
              help="Ground-truth mask dir (with --pred-masks enables FPR/FNR)")
@click.option("--pred-masks", default=None, type=click.Path())
def evaluate_cmd(pred_path, truth_path, out_path, gt_masks, pred_masks):
    """Score predictions against a manifest; writes report.json."""
    truth_rows = _read_jsonl(Path(truth_path))
    report = run_evaluate_stage(pred_path, truth_rows, out_path,
                                gt_masks_dir=gt_masks, pred_masks_dir=pred_masks)
    c = report["clustering"]
    click.echo(f"NMI {c['nmi']:.3f}  ARI {c['ari']:.3f}  F1 {c['f1']:.3f}")


@main.command("pipeline")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True,
              help="Per-image parallelism; 1 guarantees bit-reproducibility")
def pipeline_cmd(config_path, out_dir, jobs):
    """Run binarize -> crop -> train -> classify -> evaluate end to end."""
    cfg = PipelineConfig.from_dict(_load_json(config_path))
    try:
        report = run_pipeline(cfg, out_dir, jobs=jobs)
    except StageError as exc:
        record = {"stage": exc.stage, "error": type(exc.cause).__name__,
                  "message": str(exc.cause)}
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _write_json(Path(out_dir) / "error.json", record)
        click.echo(json.dumps(record), err=True)
        sys.exit(1)
    c = report["clustering"]
    click.echo(f"report written to {out_dir}/report.json "
               f"(NMI {c['nmi']:.3f}  ARI {c['ari']:.3f}  F1 {c['f1']:.3f})")


@main.command("sweep")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--axis", required=True, type=click.Choice(SWEEP_AXES))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True)
def sweep_cmd(config_path, axis, out_dir, jobs):
    """Re-run the pipeline along one ablation axis; writes sweep.json/.csv."""
    rows = run_sweep(_load_json(config_path), axis, out_dir, jobs=jobs)
    for row in rows:
        click.echo(json.dumps(row))


@main.group("model")
def model_group():
    """Model checkpoint utilities."""


@model_group.command("inspect")
@click.argument("ckpt", type=click.Path(exists=True))
def model_inspect_cmd(ckpt):
    """Print checkpoint config and named tensor shapes."""
    info = inspect_checkpoint(ckpt)
    click.echo(f"dtype: {info['dtype']}")
    click.echo(f"config: {json.dumps(info['config'], sort_keys=True)}")
    click.echo(f"extra: {json.dumps(info['extra'], sort_keys=True)}")
    for tensor in info["tensors"]:
        click.echo(f"{tensor['name']}: {tensor['shape']}")


if __name__ == "__main__":
    main()
