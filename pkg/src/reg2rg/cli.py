"""Command-line pipeline: synth -> preprocess -> train -> generate -> evaluate -> plot.

Each command consumes the previous stage's artifacts inside one run directory,
records a stage manifest keyed by input hashes (rerunning an unchanged stage
is a no-op), and holds a lock file while writing. Exit codes: 0 ok,
2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__
from .config import PRESETS, RunConfig, load_run_config
from .decoder import DecoderConfig, GenerationConfig
from .errors import ValidationError
from .features import preprocess_dataset
from .manifest import load_manifest
from .metrics import MetricReport, evaluate_corpus, length_histograms
from .model import RegionReportModel, build_tokenizer, load_sample_features
from .plots import plot_length_distributions, read_length_table, write_length_table
from .prompt import shuffle_regions
from .stages import (
    config_digest,
    file_digest,
    run_lock,
    stage_up_to_date,
    write_stage_manifest,
)
from .synth import synthesize_dataset
from .tokenizer import Tokenizer
from .trainer import TrainConfig, load_train_state, train

log = logging.getLogger("reg2rg")

ABLATION_CHOICES = ("geometry", "global", "rra", "lfd")


def common_options(fn):
    @click.option("--config", "config_path", type=click.Path(), default=None,
                  help="JSON config file; sections mirror module names.")
    @click.option("--seed", type=int, default=None, help="Override the config seed.")
    @click.option("--run-dir", type=click.Path(), default=None,
                  help="Run directory (default: $REG2RG_RUN_DIR or ./run).")
    @click.option("--preset", type=click.Choice(sorted(PRESETS)), default="desk",
                  help="Named base configuration.")
    @click.option("--ablate", multiple=True, type=click.Choice(ABLATION_CHOICES),
                  help="Disable a component (repeatable).")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


def _resolve_run_dir(run_dir) -> Path:
    if run_dir is None:
        run_dir = os.environ.get("REG2RG_RUN_DIR", "run")
    return Path(run_dir)


def _build_config(config_path, seed, ablate, preset) -> RunConfig:
    overrides: dict = {}
    if seed is not None:
        overrides["seed"] = seed
        overrides.setdefault("train", {})["seed"] = seed
        overrides.setdefault("generation", {})["seed"] = seed
    for name in ablate or ():
        overrides.setdefault("train", {})[f"use_{name}"] = False
    return load_run_config(config_path, preset=preset, overrides=overrides)


def _guarded(fn):
    """Map errors to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except ValidationError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)
        except Exception as e:  # noqa: BLE001
            click.echo(f"failure: {e}", err=True)
            sys.exit(3)

    return wrapper


@click.group()
@click.version_option(__version__)
def main():
    """Region-guided referring-and-grounding report generation pipeline."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@common_options
@_guarded
def synth(config_path, seed, run_dir, preset, ablate):
    """Generate the synthetic dataset into <run-dir>/data."""
    cfg = _build_config(config_path, seed, ablate, preset)
    run_dir = _resolve_run_dir(run_dir)
    with run_lock(run_dir):
        data_dir = run_dir / "data"
        inputs = {"synth": config_digest(dataclasses.asdict(cfg.synth)), "seed": cfg.seed}
        if stage_up_to_date(run_dir, "synth", inputs, [data_dir / "manifest.json"]):
            click.echo("synth: up to date, nothing to do")
            return
        manifest_path = synthesize_dataset(cfg.synth, cfg.seed, data_dir)
        write_stage_manifest(run_dir, "synth", inputs, [manifest_path])
        click.echo(f"synth: wrote {cfg.synth.n_samples} samples under {data_dir}")


@main.command()
@common_options
@_guarded
def preprocess(config_path, seed, run_dir, preset, ablate):
    """Compute encoder inputs for every sample into <run-dir>/features."""
    cfg = _build_config(config_path, seed, ablate, preset)
    run_dir = _resolve_run_dir(run_dir)
    with run_lock(run_dir):
        manifest_path = run_dir / "data" / "manifest.json"
        if not manifest_path.exists():
            raise ValidationError(f"missing dataset manifest {manifest_path}; run `synth` first")
        feat_dir = run_dir / "features"
        inputs = {
            "pipeline": config_digest(dataclasses.asdict(cfg.pipeline)),
            "manifest": file_digest(manifest_path),
        }
        if stage_up_to_date(run_dir, "preprocess", inputs, [feat_dir / "index.json"]):
            click.echo("preprocess: up to date, nothing to do")
            return
        records = load_manifest(manifest_path, label_size=len(cfg.synth.abnormalities))
        metas = preprocess_dataset(records, cfg.pipeline, feat_dir)
        write_stage_manifest(run_dir, "preprocess", inputs, [feat_dir / "index.json"])
        click.echo(f"preprocess: cached features for {len(metas)} samples under {feat_dir}")


def _build_model(cfg: RunConfig, vocab_size: int) -> RegionReportModel:
    torch.manual_seed(cfg.seed)
    dec_cfg = dataclasses.replace(cfg.decoder, vocab_size=vocab_size)
    return RegionReportModel(cfg.encoder, dec_cfg,
                             cfg.pipeline.texture_input_dims, cfg.pipeline.geometry_input_dims)


def _load_dataset(cfg: RunConfig, run_dir: Path):
    manifest_path = run_dir / "data" / "manifest.json"
    feat_dir = run_dir / "features"
    if not manifest_path.exists():
        raise ValidationError(f"missing dataset manifest {manifest_path}; run `synth` first")
    if not (feat_dir / "index.json").exists():
        raise ValidationError(f"missing feature cache under {feat_dir}; run `preprocess` first")
    records = load_manifest(manifest_path, label_size=len(cfg.synth.abnormalities))
    features = [load_sample_features(feat_dir, rec) for rec in records]
    return records, features


@main.command("train")
@common_options
@click.option("--resume", "resume_from", type=click.Path(), default=None,
              help="Checkpoint to resume from.")
@_guarded
def train_cmd(config_path, seed, run_dir, preset, ablate, resume_from):
    """Train the model; writes checkpoints and the loss log."""
    cfg = _build_config(config_path, seed, ablate, preset)
    run_dir = _resolve_run_dir(run_dir)
    with run_lock(run_dir):
        records, features = _load_dataset(cfg, run_dir)
        inputs = {
            "train": config_digest(dataclasses.asdict(cfg.train)),
            "encoder": config_digest(dataclasses.asdict(cfg.encoder)),
            "decoder": config_digest(dataclasses.asdict(cfg.decoder)),
            "features": file_digest(run_dir / "features" / "index.json"),
            "seed": cfg.seed,
        }
        final = run_dir / "checkpoints" / "final.ckpt"
        if resume_from is None and stage_up_to_date(run_dir, "train", inputs, [final]):
            click.echo("train: up to date, nothing to do")
            return
        tokenizer = build_tokenizer(records, instruction=cfg.train.instruction)
        model = _build_model(cfg, tokenizer.vocab_size)
        final = train(model, tokenizer, features, cfg.train, run_dir, resume_from=resume_from)
        write_stage_manifest(run_dir, "train", inputs, [final])
        click.echo(f"train: wrote final checkpoint {final}")


@main.command()
@common_options
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Checkpoint file (default <run-dir>/checkpoints/final.ckpt).")
@click.option("--shuffle-slots", is_flag=True, default=False,
              help="Assign regions to slots in random order instead of canonical order.")
@_guarded
def generate(config_path, seed, run_dir, preset, ablate, checkpoint, shuffle_slots):
    """Decode reports for every sample with the trained model."""
    cfg = _build_config(config_path, seed, ablate, preset)
    run_dir = _resolve_run_dir(run_dir)
    with run_lock(run_dir):
        records, features = _load_dataset(cfg, run_dir)
        ckpt = Path(checkpoint) if checkpoint else run_dir / "checkpoints" / "final.ckpt"
        if not ckpt.exists():
            raise ValidationError(f"missing checkpoint {ckpt}; run `train` first")
        out_dir = run_dir / "generated"
        out_path = out_dir / "generated.json"
        inputs = {
            "checkpoint": file_digest(ckpt),
            "generation": config_digest(dataclasses.asdict(cfg.generation)),
            "features": file_digest(run_dir / "features" / "index.json"),
            "shuffle_slots": shuffle_slots,
        }
        if stage_up_to_date(run_dir, "generate", inputs, [out_path]):
            click.echo("generate: up to date, nothing to do")
            return

        tokenizer = Tokenizer.load(ckpt.parent / "tokenizer.json")
        model = _build_model(cfg, tokenizer.vocab_size)
        meta = load_train_state(ckpt, model)
        tmeta = meta.get("train_config", {})
        flags_cfg = TrainConfig(**{k: v for k, v in tmeta.items()}) if tmeta else cfg.train
        model.eval()

        rng = np.random.default_rng(cfg.generation.seed)
        outputs = []
        for rec, feats in zip(records, features):
            assignment = None
            if shuffle_slots:
                assignment = shuffle_regions(model.local_features(feats, flags_cfg.flags), rng)
            ids, text, report, assignment = model.generate_report(
                feats, flags_cfg.flags, tokenizer, cfg.generation,
                instruction=flags_cfg.instruction, region_labels=flags_cfg.region_labels,
                assignment=assignment,
            )
            outputs.append({
                "sample_id": rec.sample_id,
                "raw_text": text,
                "sections": [dataclasses.asdict(s) for s in report.sections],
                "evaluation_text": report.evaluation_text,
                "true_areas": {str(slot): assignment.area_of(slot)
                               for slot in range(1, assignment.n + 1)},
            })
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(outputs, sort_keys=True, indent=1) + "\n")
        write_stage_manifest(run_dir, "generate", inputs, [out_path])
        click.echo(f"generate: wrote {len(outputs)} reports to {out_path}")


@main.command()
@common_options
@click.option("--generated", "generated_path", type=click.Path(), default=None,
              help="Generated reports JSON (default <run-dir>/generated/generated.json).")
@click.option("--truth", "truth_path", type=click.Path(), default=None,
              help="Ground-truth manifest (default <run-dir>/data/manifest.json).")
@_guarded
def evaluate(config_path, seed, run_dir, preset, ablate, generated_path, truth_path):
    """Score generated reports against the ground truth."""
    cfg = _build_config(config_path, seed, ablate, preset)
    run_dir = _resolve_run_dir(run_dir)
    with run_lock(run_dir):
        gen_path = Path(generated_path) if generated_path else run_dir / "generated" / "generated.json"
        man_path = Path(truth_path) if truth_path else run_dir / "data" / "manifest.json"
        for p, stage in ((gen_path, "generate"), (man_path, "synth")):
            if not p.exists():
                raise ValidationError(f"missing {p}; run `{stage}` first")
        eval_dir = run_dir / "eval"
        inputs = {"generated": file_digest(gen_path), "truth": file_digest(man_path)}
        outputs = [eval_dir / "metrics.json", eval_dir / "per_sample.csv",
                   eval_dir / "length_distribution.csv"]
        if stage_up_to_date(run_dir, "evaluate", inputs, outputs):
            click.echo("evaluate: up to date, nothing to do")
            return

        records = {r.sample_id: r for r in
                   load_manifest(man_path, label_size=len(cfg.synth.abnormalities))}
        generated = json.loads(gen_path.read_text())
        report = evaluate_generated(generated, records)

        eval_dir.mkdir(parents=True, exist_ok=True)
        (eval_dir / "metrics.json").write_text(json.dumps(report.as_dict(), sort_keys=True, indent=1) + "\n")
        _write_per_sample_table(generated, records, eval_dir / "per_sample.csv")
        candidates, references = _paired_texts(generated, records)
        write_length_table(length_histograms(candidates, references),
                           eval_dir / "length_distribution.csv")
        write_stage_manifest(run_dir, "evaluate", inputs, outputs)
        click.echo(json.dumps(report.as_dict(), sort_keys=True, indent=1))


def _reference_text(entry: dict, record) -> str:
    slots = sorted(entry["true_areas"], key=int)
    return "\n".join(record.region_reports[entry["true_areas"][s]] for s in slots)


def _paired_texts(generated: list[dict], records: dict):
    candidates, references = [], []
    for entry in generated:
        rec = records.get(entry["sample_id"])
        if rec is None:
            raise ValidationError(f"generated sample {entry['sample_id']!r} not in manifest")
        candidates.append(entry["evaluation_text"])
        references.append(_reference_text(entry, rec))
    return candidates, references


def evaluate_generated(generated: list[dict], records: dict) -> MetricReport:
    candidates, references = _paired_texts(generated, records)
    region_pairs = []
    for entry in generated:
        predicted = {s["slot"]: s["predicted_area"] for s in entry["sections"]}
        for slot, true_area in entry["true_areas"].items():
            region_pairs.append((true_area, predicted.get(int(slot), "UNKNOWN")))
    return evaluate_corpus(candidates, references, region_pairs=region_pairs)


def _write_per_sample_table(generated, records, path) -> None:
    from .metrics import bleu_n, meteor, rouge_l

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l"])
        for entry in generated:
            rec = records[entry["sample_id"]]
            cand = entry["evaluation_text"]
            ref = _reference_text(entry, rec)
            writer.writerow(
                [entry["sample_id"]]
                + [f"{bleu_n(cand, ref, k):.4f}" for k in range(1, 5)]
                + [f"{meteor(cand, ref):.4f}", f"{rouge_l(cand, ref):.4f}"]
            )


@main.command()
@common_options
@click.option("--eval-dir", "eval_dir", type=click.Path(), default=None,
              help="Evaluation output directory (default <run-dir>/eval).")
@_guarded
def plot(config_path, seed, run_dir, preset, ablate, eval_dir):
    """Render the report-length distribution figure and its data table."""
    run_dir = _resolve_run_dir(run_dir)
    with run_lock(run_dir):
        eval_dir = Path(eval_dir) if eval_dir else run_dir / "eval"
        table_path = eval_dir / "length_distribution.csv"
        metrics_path = eval_dir / "metrics.json"
        for p in (table_path, metrics_path):
            if not p.exists():
                raise ValidationError(f"missing {p}; run `evaluate` first")
        plots_dir = run_dir / "plots"
        inputs = {"table": file_digest(table_path)}
        outputs = [plots_dir / "length_distribution.png", plots_dir / "length_distribution.csv"]
        if stage_up_to_date(run_dir, "plot", inputs, outputs):
            click.echo("plot: up to date, nothing to do")
            return
        rows = read_length_table(table_path)
        kl = json.loads(metrics_path.read_text())["length_kl"]
        plots_dir.mkdir(parents=True, exist_ok=True)
        plot_length_distributions(rows, kl, plots_dir / "length_distribution.png")
        write_length_table(rows, plots_dir / "length_distribution.csv")
        write_stage_manifest(run_dir, "plot", inputs, outputs)
        click.echo(f"plot: wrote {plots_dir / 'length_distribution.png'}")


if __name__ == "__main__":
    main()
