"""Pipeline orchestration: stage commands, run reports, exports, figures.

Every stage writes its outputs plus a JSON report (counts, duration, seed,
config hash) under ``<out>/reports/``. Relative paths in the config resolve
against ``--out`` so a whole run lives in one directory tree.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from .config import ConfigError, RunConfig, config_hash, load_config
from .domain import (
    BLANK,
    TEXT,
    CellId,
    ColumnSchema,
    DatasetManifest,
    DomainError,
    Label,
    ManifestEntry,
    PRESET_SCHEMAS,
    read_manifest,
    stratified_split,
    write_manifest,
)
from .neuro import NumericsError

EXIT_MISSING_INPUT = 2
EXIT_VALIDATION = 3
EXIT_NUMERICS = 4


def _resolve(out: Path, p: str | Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else out / p


def _schema_for(cfg: RunConfig) -> ColumnSchema:
    if cfg.schema not in PRESET_SCHEMAS:
        raise ConfigError(f"unknown schema preset {cfg.schema!r}")
    return PRESET_SCHEMAS[cfg.schema]


def _digit_schema(schema: ColumnSchema) -> ColumnSchema:
    return ColumnSchema(f"{schema.name}-digit", 1, None, allows_blank=False, allows_text=False)


class StageRunner:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)

    def run(self, stage: str, fn):
        t0 = time.monotonic()
        try:
            counts = fn()
        except FileNotFoundError as e:
            click.echo(f"{stage}: missing input: {e}", err=True)
            sys.exit(EXIT_MISSING_INPUT)
        except (ConfigError, DomainError) as e:
            click.echo(f"{stage}: {e}", err=True)
            sys.exit(EXIT_VALIDATION)
        except NumericsError as e:
            click.echo(f"{stage}: numerics failure: {e}", err=True)
            sys.exit(EXIT_NUMERICS)
        report = {
            "stage": stage,
            "duration_s": round(time.monotonic() - t0, 3),
            "seed": self.cfg.seed,
            "config_hash": config_hash(self.cfg),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "counts": counts,
        }
        rdir = self.out / "reports"
        rdir.mkdir(parents=True, exist_ok=True)
        with open(rdir / f"{stage}.json", "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
        click.echo(json.dumps(report["counts"], sort_keys=True))
        return counts


def _load_run_config(config_path, seed, workers, out) -> RunConfig:
    try:
        cfg = load_config(config_path)
    except (ConfigError, FileNotFoundError) as e:
        click.echo(f"config: {e}", err=True)
        sys.exit(EXIT_MISSING_INPUT if isinstance(e, FileNotFoundError) else EXIT_VALIDATION)
    if seed is not None:
        cfg.seed = seed
    if workers is not None:
        cfg.workers = workers
    if out is not None:
        cfg.out = out
    return cfg


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML run config")
@click.option("--seed", type=int, default=None, help="override the run seed")
@click.option("--workers", type=int, default=None, help="parallel workers where supported")
@click.option("--out", type=click.Path(), default=None, help="run output directory")
@click.pass_context
def main(ctx, config_path, seed, workers, out):
    """End-to-end transcription pipeline for handwritten numeric codes."""
    ctx.obj = _load_run_config(config_path, seed, workers, out)


# ---------------------------------------------------------------------------


@main.command()
@click.pass_obj
def synth(cfg: RunConfig):
    """Generate a synthetic corpus (cells) or questionnaire pages."""
    from . import synth as synthmod

    runner = StageRunner(cfg)

    def body():
        s = cfg.synth
        schema = _schema_for(cfg)
        out_dir = _resolve(runner.out, s.out)
        if s.kind == "cells":
            codes = synthmod.uniform_codes(s.n_classes, digit_count=s.digit_count, seed=cfg.seed)
            weights = (
                synthmod.long_tail_weights(s.n_classes, s.tail_mass)
                if s.distribution == "long_tail"
                else tuple([1.0 / s.n_classes] * s.n_classes)
            )
            spec = synthmod.CorpusSpec(
                n_cells=s.n_cells,
                codes=codes,
                code_weights=weights,
                blank_fraction=s.blank_fraction,
                text_fraction=s.text_fraction,
                diagonal_blank_fraction=s.diagonal_blank_fraction,
                crossed_out_fraction=s.crossed_out_fraction,
                noise=s.noise,
                seed=cfg.seed,
                cell_hw=(s.cell_height, s.cell_width),
            )
            cells = synthmod.gen_corpus(spec)
            manifest_path = synthmod.write_corpus(cells, schema, out_dir)
            labels = [c.truth.label for c in cells]
            return {
                "cells": len(cells),
                "blanks": labels.count(BLANK),
                "texts": labels.count(TEXT),
                "classes": len(set(labels)),
                "manifest": str(manifest_path),
            }
        if s.kind == "pages":
            from PIL import Image

            layout = synthmod.PageLayout(
                n_code_rows=s.code_rows, code_column=s.code_column, noise=s.noise,
                digit_count=s.digit_count,
            )
            out_dir.mkdir(parents=True, exist_ok=True)
            truths = []
            for page, truth in synthmod.gen_pages(s.n_pages, layout, seed=cfg.seed):
                Image.fromarray(page.pixels).save(out_dir / f"{page.page_id}.png")
                truths.append(
                    {
                        "page_id": truth.page_id,
                        "h_lines": list(truth.h_lines),
                        "v_lines": list(truth.v_lines),
                        "rotation_deg": truth.rotation_deg,
                        "code_cells": [
                            {"row": r, "col": c, "box": list(b), "code": code}
                            for r, c, b, code in truth.code_cells
                        ],
                    }
                )
            with open(out_dir / "truth.jsonl", "w", encoding="utf-8") as f:
                for t in truths:
                    f.write(json.dumps(t, sort_keys=True) + "\n")
            return {"pages": s.n_pages, "out": str(out_dir)}
        raise ConfigError(f"unknown synth kind {s.kind!r}")

    runner.run("synth", body)


def _split_one(args):
    from PIL import Image

    from .pagegrid import CellConfig, LineConfig, PageImage, split_page
    from .preprocess import save_cell_png

    page_path, out_images, line_cfg, cell_cfg = args
    with Image.open(page_path) as im:
        pixels = np.asarray(im.convert("RGB"))
    page = PageImage(page_id=Path(page_path).stem, pixels=pixels)
    result = split_page(page, line_cfg, cell_cfg)
    names = []
    if result.status == "split":
        for cell in result.cells:
            name = f"{cell.id}.png"
            save_cell_png(cell, Path(out_images) / name)
            names.append((str(cell.id), name))
    return {
        "page_id": page.page_id,
        "status": result.status,
        "cells": len(result.cells),
        "reason": result.failure_reason,
        "names": names,
    }


@main.command()
@click.pass_obj
def split(cfg: RunConfig):
    """Split page images into per-cell images plus a split report."""
    runner = StageRunner(cfg)

    def body():
        from .pagegrid import CellConfig, LineConfig

        s = cfg.split
        pages_dir = _resolve(runner.out, s.pages)
        if not pages_dir.exists():
            raise FileNotFoundError(pages_dir)
        page_files = sorted(p for p in pages_dir.glob("*.png"))
        if not page_files:
            raise FileNotFoundError(f"no page images in {pages_dir}")
        out_dir = _resolve(runner.out, s.out)
        img_dir = out_dir / "images"
        img_dir.mkdir(parents=True, exist_ok=True)
        line_cfg = LineConfig(min_coverage=s.min_coverage, band_px=s.band_px, merge_px=s.merge_px)
        cell_cfg = CellConfig(
            row_start=s.row_start,
            row_stride=s.row_stride,
            column_bands=tuple(s.column_bands) if s.column_bands else None,
            min_cell_px=s.min_cell_px,
            inset_px=s.inset_px,
            strip_px=s.strip_px,
            min_hits=s.min_hits,
            step_px=s.step_px,
            max_px=s.max_px,
            red_margin=s.red_margin,
        )
        jobs = [(str(p), str(img_dir), line_cfg, cell_cfg) for p in page_files]
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_split_one, jobs))
        else:
            results = [_split_one(j) for j in jobs]
        results.sort(key=lambda r: r["page_id"])
        entries = []
        with open(out_dir / "split_report.jsonl", "w", encoding="utf-8") as f:
            for r in results:
                f.write(
                    json.dumps(
                        {k: r[k] for k in ("page_id", "status", "cells", "reason")},
                        sort_keys=True,
                    )
                    + "\n"
                )
                for cid, name in r["names"]:
                    entries.append(ManifestEntry(CellId.parse(cid), f"images/{name}"))
        manifest = DatasetManifest(_schema_for(cfg), tuple(entries), provenance="full")
        write_manifest(manifest, out_dir / "manifest.jsonl")
        n_split = sum(1 for r in results if r["status"] == "split")
        return {
            "pages": len(results),
            "split": n_split,
            "failed": len(results) - n_split,
            "split_rate": round(n_split / len(results), 4),
            "cells": sum(r["cells"] for r in results),
        }

    runner.run("split", body)


@main.command()
@click.pass_obj
def preprocess(cfg: RunConfig):
    """Validate and profile cell images (tensors are recomputed on demand)."""
    runner = StageRunner(cfg)

    def body():
        from .models import load_examples

        s = cfg.preprocess
        manifest_path = _resolve(runner.out, s.manifest)
        if not manifest_path.exists():
            raise FileNotFoundError(manifest_path)
        manifest = read_manifest(manifest_path, _schema_for(cfg))
        x, labels, _ = load_examples(manifest, manifest_path, (s.target_height, s.target_width))
        ink = x[:, :, :, 0].mean(axis=(1, 2))
        return {
            "cells": int(x.shape[0]),
            "target": [s.target_height, s.target_width],
            "blank_like": int((ink < 1e-4).sum()),
            "mean_ink": float(ink.mean()) if len(ink) else 0.0,
        }

    runner.run("preprocess", body)


@main.command()
@click.pass_obj
def segment(cfg: RunConfig):
    """Split labeled 3-digit cells into single digits with positional labels."""
    runner = StageRunner(cfg)

    def body():
        from .digitseg import SegConfig, segment_three
        from .models import load_examples
        from .preprocess import load_cell_png, preprocess as preprocess_cell, save_cell_png
        from .domain import resolve_image_path

        s = cfg.segment
        manifest_path = _resolve(runner.out, s.manifest)
        if not manifest_path.exists():
            raise FileNotFoundError(manifest_path)
        schema = _schema_for(cfg)
        manifest = read_manifest(manifest_path, schema)
        seg_cfg = SegConfig(
            min_weight=s.min_weight,
            min_sep_frac=s.min_sep_frac,
            digit_target_hw=(s.digit_height, s.digit_width),
        )
        out_dir = _resolve(runner.out, s.out)
        img_dir = out_dir / "images"
        img_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        skips = []
        n_digits = 0
        for e in manifest.entries:
            label = e.resolved_label
            if label is None or not (label.isdigit() and len(label) == 3):
                skips.append((str(e.cell_id), "not a 3-digit code"))
                continue
            from .preprocess import TARGET_3DIGIT

            cell = load_cell_png(resolve_image_path(manifest_path, e), e.cell_id)
            outcome = segment_three(preprocess_cell(cell, TARGET_3DIGIT), seg_cfg)
            if not outcome.is_split:
                skips.append((str(e.cell_id), outcome.reason))
                continue
            for digit_label, crop in zip(label, outcome.crops):
                name = f"{crop.id}.png"
                save_cell_png(crop, img_dir / name)
                entries.append(
                    ManifestEntry(
                        crop.id,
                        f"images/{name}",
                        tuple(
                            Label(digit_label, lab.labeler_id, lab.timestamp) for lab in e.labels
                        ),
                    )
                )
                n_digits += 1
        digit_manifest = DatasetManifest(
            _digit_schema(schema), tuple(entries), provenance=manifest.provenance
        )
        write_manifest(digit_manifest, out_dir / "manifest.jsonl")
        with open(out_dir / "segment_report.jsonl", "w", encoding="utf-8") as f:
            for cid, reason in skips:
                f.write(json.dumps({"cell_id": cid, "reason": reason}, sort_keys=True) + "\n")
        return {
            "input": len(manifest),
            "split": (len(manifest) - len(skips)),
            "skipped": len(skips),
            "digits": n_digits,
        }

    runner.run("segment", body)


def _train_hw(stage, preset) -> tuple[int, int] | None:
    if stage.input_height is not None and stage.input_width is not None:
        return (stage.input_height, stage.input_width)
    return None


@main.command()
@click.pass_obj
def train(cfg: RunConfig):
    """Train a preset on a labeled manifest; writes checkpoint, history, curves."""
    runner = StageRunner(cfg)

    def body():
        from .models import ArchPreset, TrainConfig, build, load_examples, save_model
        from .models import train as train_model
        from .report import plot_training_history

        s = cfg.train
        manifest_path = _resolve(runner.out, s.manifest)
        if not manifest_path.exists():
            raise FileNotFoundError(manifest_path)
        preset = ArchPreset(s.preset)
        schema = _schema_for(cfg)
        if preset is ArchPreset.THREE_BY_ONE:
            schema = _digit_schema(schema)
        manifest = read_manifest(manifest_path, schema)
        train_m, val_m = stratified_split(manifest, s.val_fraction, cfg.seed)
        hw = _train_hw(s, preset)
        from .models import PRESET_INPUT_HW

        input_hw = hw or PRESET_INPUT_HW[preset]
        x_tr, lab_tr, _ = load_examples(train_m, manifest_path, input_hw)
        x_va, lab_va, _ = load_examples(val_m, manifest_path, input_hw)
        vocab = sorted({v for v in lab_tr if v not in (BLANK, TEXT)})
        model = build(preset, schema, vocab=vocab, seed=cfg.seed, input_hw=input_hw)
        tc = TrainConfig(
            max_epochs=s.max_epochs,
            patience=s.patience,
            batch_size=s.batch_size,
            seed=cfg.seed,
            lr=s.lr,
            time_budget_s=s.time_budget_s,
        )
        model, history = train_model(model, x_tr, lab_tr, x_va, lab_va, tc)
        ckpt_path = _resolve(runner.out, s.checkpoint)
        ckpt_path.parent.mkdir(parents=True, exist_ok=True)
        ckpt_id = save_model(model, ckpt_path, train_config=dataclasses.asdict(tc))
        hist_path = ckpt_path.with_suffix(".history.csv")
        with open(hist_path, "w", encoding="utf-8") as f:
            f.write("epoch,train_loss,train_accuracy,val_loss,val_accuracy,seconds\n")
            for h in history:
                f.write(
                    f"{h.epoch},{h.train_loss:.6f},{h.train_accuracy:.6f},"
                    f"{h.val_loss:.6f},{h.val_accuracy:.6f},{h.seconds:.2f}\n"
                )
        plot_training_history(history, ckpt_path.with_suffix(".history.png"))
        best = max(history, key=lambda h: h.val_accuracy)
        return {
            "examples": int(x_tr.shape[0]),
            "val_examples": int(x_va.shape[0]),
            "epochs": len(history),
            "checkpoint": ckpt_id,
            "best_val_accuracy": round(best.val_accuracy, 4),
        }

    runner.run("train", body)


@main.command()
@click.pass_obj
def predict(cfg: RunConfig):
    """Predict a manifest with a checkpoint; writes the prediction export."""
    runner = StageRunner(cfg)

    def body():
        from .digitseg import segment_three
        from .domain import resolve_image_path
        from .models import (
            ArchPreset,
            compose_3x1,
            load_model,
            predict_batch,
            write_predictions,
        )
        from .preprocess import TARGET_3DIGIT, load_cell_png, preprocess as preprocess_cell

        s = cfg.predict
        manifest_path = _resolve(runner.out, s.manifest)
        ckpt_path = _resolve(runner.out, s.checkpoint)
        for p in (manifest_path, ckpt_path):
            if not p.exists():
                raise FileNotFoundError(p)
        schema = _schema_for(cfg)
        model = load_model(ckpt_path, schema)
        manifest = read_manifest(manifest_path, schema)
        preds = []
        if model.preset is ArchPreset.THREE_BY_ONE:
            for e in manifest.entries:
                cell = load_cell_png(resolve_image_path(manifest_path, e), e.cell_id)
                outcome = segment_three(preprocess_cell(cell, TARGET_3DIGIT))
                preds.append(compose_3x1(outcome, model))
        else:
            cells = [
                preprocess_cell(
                    load_cell_png(resolve_image_path(manifest_path, e), e.cell_id), model.input_hw
                )
                for e in manifest.entries
            ]
            for i in range(0, len(cells), 256):
                preds.extend(predict_batch(model, cells[i : i + 256]))
        out_path = _resolve(runner.out, s.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_predictions(preds, out_path)
        from .models import ManualRoute

        n_manual = sum(1 for p in preds if isinstance(p, ManualRoute))
        return {"cells": len(preds), "unsegmentable": n_manual, "export": str(out_path)}

    runner.run("predict", body)


@main.command()
@click.pass_obj
def decide(cfg: RunConfig):
    """Route predictions at a threshold; with ground truth, sweep and plot."""
    runner = StageRunner(cfg)

    def body():
        from .decide import (
            DecisionPolicy,
            default_grid,
            manual_composition,
            pick_threshold,
            route,
            sweep,
            write_curve_csv,
        )
        from .models import ManualRoute, read_predictions
        from .report import plot_decision_curve

        s = cfg.decide
        pred_path = _resolve(runner.out, s.predictions)
        if not pred_path.exists():
            raise FileNotFoundError(pred_path)
        preds = read_predictions(pred_path)
        out_dir = _resolve(runner.out, s.out)
        out_dir.mkdir(parents=True, exist_ok=True)

        counts: dict = {}
        threshold = s.threshold
        choice = None
        if s.truth_manifest:
            truth_path = _resolve(runner.out, s.truth_manifest)
            if not truth_path.exists():
                raise FileNotFoundError(truth_path)
            truth = {
                str(e.cell_id): e.resolved_label
                for e in read_manifest(truth_path, _schema_for(cfg)).entries
            }
            scored = []
            for p in preds:
                cid = str(p.cell_id)
                if cid not in truth:
                    continue
                if isinstance(p, ManualRoute) or p.value is None:
                    scored.append(((), False))
                else:
                    scored.append((tuple(p.confidences), p.value == truth[cid]))
            curve = sweep(
                scored,
                thresholds=default_grid(s.grid_step),
                human_error_rate=s.human_error_rate,
            )
            write_curve_csv(curve, out_dir / "decision_curve.csv")
            choice = pick_threshold(curve, s.max_manual_fraction, s.max_total_error)
            plot_decision_curve(curve, out_dir / "decision_curve.png", choice)
            if threshold is None:
                threshold = choice.threshold
            comp = manual_composition(scored, threshold)
            counts.update(
                {
                    "picked_threshold": choice.threshold,
                    "feasible": choice.feasible,
                    "manual_correct": comp.n_correct_sent,
                    "manual_wrong": comp.n_wrong_sent,
                }
            )
        if threshold is None:
            raise ConfigError("decide needs either a threshold or a truth manifest to pick one")
        policy = DecisionPolicy(threshold=threshold, human_error_rate=s.human_error_rate)
        n_auto = n_manual = 0
        manual_preds = []
        with open(out_dir / "decisions.jsonl", "w", encoding="utf-8") as f:
            for p in preds:
                decision = route(p, policy)
                if hasattr(decision, "value"):
                    n_auto += 1
                    rec = {"cell_id": str(p.cell_id), "route": "auto", "value": decision.value}
                else:
                    n_manual += 1
                    manual_preds.append(p)
                    rec = {"cell_id": str(p.cell_id), "route": "manual", "reason": decision.reason}
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        from .models import write_predictions

        write_predictions(manual_preds, out_dir / "manual_queue.jsonl")
        counts.update(
            {
                "threshold": threshold,
                "auto": n_auto,
                "manual": n_manual,
                "manual_fraction": round(n_manual / max(len(preds), 1), 4),
            }
        )
        return counts

    runner.run("decide", body)


@main.command()
@click.pass_obj
def evaluate(cfg: RunConfig):
    """Metrics, confusion pairs, and distribution comparison against truth."""
    runner = StageRunner(cfg)

    def body():
        from .evaluate import confusion_pairs, distribution_compare, metrics
        from .models import ManualRoute, read_predictions
        from .report import plot_distribution_scatter

        s = cfg.evaluate
        pred_path = _resolve(runner.out, s.predictions)
        truth_path = _resolve(runner.out, s.truth_manifest)
        for p in (pred_path, truth_path):
            if not p.exists():
                raise FileNotFoundError(p)
        preds = read_predictions(pred_path)
        truth = {
            str(e.cell_id): e.resolved_label
            for e in read_manifest(truth_path, _schema_for(cfg)).entries
        }
        pairs = []
        for p in preds:
            cid = str(p.cell_id)
            if cid not in truth or truth[cid] is None:
                continue
            if isinstance(p, ManualRoute):
                value = "?manual"
            else:
                value = p.value if p.value is not None else f"?{p.raw}"
            pairs.append((value, truth[cid]))
        if not pairs:
            raise ConfigError("no overlapping cells between predictions and truth")
        predicted = [p for p, _ in pairs]
        actual = [t for _, t in pairs]
        rep = metrics(predicted, actual)
        out_dir = _resolve(runner.out, s.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "metrics.json", "w", encoding="utf-8") as f:
            json.dump(
                {
                    "accuracy": rep.accuracy,
                    "precision": rep.precision,
                    "recall": rep.recall,
                    "f1": rep.f1,
                    "per_class": [dataclasses.asdict(c) for c in rep.per_class],
                },
                f,
                indent=2,
                sort_keys=True,
            )
        with open(out_dir / "confusions.csv", "w", encoding="utf-8") as f:
            f.write("true,predicted,count\n")
            for t, p, c in confusion_pairs(predicted, actual, s.top_k):
                f.write(f"{t},{p},{c}\n")
        comp = distribution_compare(actual, predicted, s.deviation_factor, s.min_support)
        with open(out_dir / "distribution.csv", "w", encoding="utf-8") as f:
            f.write("class,reference_freq,predicted_freq,deviating\n")
            for cls, rf, pf in comp.scatter_points():
                f.write(f"{cls},{rf:.8f},{pf:.8f},{int(cls in comp.deviating)}\n")
        plot_distribution_scatter(comp, out_dir / "distribution.png")
        return {
            "n": len(pairs),
            "accuracy": round(rep.accuracy, 4),
            "precision": round(rep.precision, 4),
            "recall": round(rep.recall, 4),
            "f1": round(rep.f1, 4),
            "tv_distance": round(comp.tv_distance, 4),
            "deviating": len(comp.deviating),
        }

    runner.run("evaluate", body)


@main.command("shift-test")
@click.pass_obj
def shift_test_cmd(cfg: RunConfig):
    """Two-sample dataset-shift test between two manifests."""
    runner = StageRunner(cfg)

    def body():
        from .evaluate import ShiftConfig, shift_test_manifests

        s = cfg.shift
        path_a = _resolve(runner.out, s.manifest_a)
        path_b = _resolve(runner.out, s.manifest_b)
        for p in (path_a, path_b):
            if not p.exists():
                raise FileNotFoundError(p)
        schema = _schema_for(cfg)
        report = shift_test_manifests(
            read_manifest(path_a, schema),
            path_a,
            read_manifest(path_b, schema),
            path_b,
            ShiftConfig(
                input_hw=(s.input_height, s.input_width),
                epochs=s.epochs,
                batch_size=s.batch_size,
                lr=s.lr,
                seed=cfg.seed,
            ),
        )
        out = {
            "f1_a": round(report.f1_a, 4),
            "f1_b": round(report.f1_b, 4),
            "n_train": report.n_train,
            "n_test": report.n_test,
        }
        with open(runner.out / "shift_report.json", "w", encoding="utf-8") as f:
            json.dump(out, f, indent=2, sort_keys=True)
        return out

    runner.run("shift-test", body)


@main.command("cross-validate")
@click.pass_obj
def cross_validate_cmd(cfg: RunConfig):
    """k-fold cross validation of a preset on a labeled manifest."""
    runner = StageRunner(cfg)

    def body():
        from .evaluate import cross_validate
        from .models import ArchPreset, PRESET_INPUT_HW, TrainConfig, load_examples

        s = cfg.crossval
        manifest_path = _resolve(runner.out, s.manifest)
        if not manifest_path.exists():
            raise FileNotFoundError(manifest_path)
        preset = ArchPreset(s.preset)
        schema = _schema_for(cfg)
        if preset is ArchPreset.THREE_BY_ONE:
            schema = _digit_schema(schema)
        manifest = read_manifest(manifest_path, schema)
        hw = None
        if s.input_height is not None and s.input_width is not None:
            hw = (s.input_height, s.input_width)
        input_hw = hw or PRESET_INPUT_HW[preset]
        x, labels, _ = load_examples(manifest, manifest_path, input_hw)
        result = cross_validate(
            preset,
            x,
            labels,
            schema,
            k=s.k,
            seed=cfg.seed,
            train_cfg=TrainConfig(max_epochs=s.max_epochs, batch_size=s.batch_size, lr=s.lr),
            input_hw=input_hw,
        )
        out_dir = _resolve(runner.out, s.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "folds.csv", "w", encoding="utf-8") as f:
            f.write("fold,accuracy,precision,recall,f1\n")
            for i, r in enumerate(result.reports):
                f.write(f"{i},{r.accuracy:.6f},{r.precision:.6f},{r.recall:.6f},{r.f1:.6f}\n")
        return {
            "k": s.k,
            "mean_accuracy": round(result.mean_accuracy, 4),
            "std_accuracy": round(result.std_accuracy, 4),
        }

    runner.run("cross-validate", body)


@main.command()
@click.pass_obj
def serve(cfg: RunConfig):
    """Run the labeling service (HTTP) over an event journal."""
    import uvicorn

    from .labelsvc.api import create_app
    from .labelsvc.queue import LabelQueue

    s = cfg.serve
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    queue = LabelQueue(
        _schema_for(cfg),
        journal_path=_resolve(out, s.journal),
        lease_seconds=s.lease_seconds,
        batch_size=s.batch_size,
    )
    app = create_app(queue, image_root=_resolve(out, s.image_root), static_dir=s.static_dir)
    click.echo(f"serving on http://{s.host}:{s.port}")
    uvicorn.run(app, host=s.host, port=s.port, log_level="warning")


@main.command()
@click.pass_obj
def export(cfg: RunConfig):
    """Export completed labels from a journal as a training manifest."""
    runner = StageRunner(cfg)

    def body():
        from .labelsvc.queue import LabelQueue

        s = cfg.export
        journal = _resolve(runner.out, s.journal)
        if not journal.exists():
            raise FileNotFoundError(journal)
        queue = LabelQueue(_schema_for(cfg), journal_path=journal)
        manifest = queue.export_manifest()
        out_path = _resolve(runner.out, s.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_manifest(manifest, out_path, check_images=False)
        return {"cells": len(manifest), "manifest": str(out_path)}

    runner.run("export", body)


if __name__ == "__main__":
    main()
