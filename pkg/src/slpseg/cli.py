"""``slpseg`` command line: gen-data, train, eval, infogap, theorem1."""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import config as config_mod
from .availability import enumerate_scenarios, parse_scenario
from .dataset import (dataset_hash, generate_synthetic, load_bundle, normalize, save_bundle, split,
                      write_arrays)
from .errors import ConfigError, TrainingDivergedError
from .evaluation import binarize, evaluate_scenarios, predict
from .infogap import information_gap, scenario_entropies, theorem_sweep, write_sweep
from .training import load_model, train

OUT_ENV = "SLPSEG_OUT"
EXIT_CONFIG, EXIT_RUNTIME = 2, 3


def _out_dir(out: str | None, cfg: config_mod.RunConfig, sub: str) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get(OUT_ENV, cfg.output_dir)) / sub


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (TrainingDivergedError, FloatingPointError, RuntimeError) as exc:
            click.echo(f"runtime error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)
    return wrapper


def _common(fn):
    fn = click.option("--out", type=click.Path(file_okay=False), help="Output directory.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Overrides the config seed.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                      help="YAML run configuration.")(fn)
    return fn


def build_dataset(cfg: config_mod.RunConfig):
    bundle = split(generate_synthetic(cfg.dataset), cfg.split.fractions, cfg.seed)
    return normalize(bundle)[0]


@click.group(invoke_without_command=True)
@click.option("-v", "--verbose", is_flag=True)
@click.option("--print-config", is_flag=True, help="Dump the fully defaulted config and exit.")
@click.pass_context
def main(ctx, verbose, print_config):
    """Multimodal segmentation with structured latent projection under missing modalities."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    if print_config:
        click.echo(config_mod.dump_config(config_mod.RunConfig()), nl=False)
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@main.command("gen-data")
@_common
@_exit_codes
def gen_data(config_path, seed, out):
    """Generate, split and normalise the synthetic dataset."""
    cfg = config_mod.load_config(config_path, seed)
    directory = save_bundle(build_dataset(cfg), _out_dir(out, cfg, "data"))
    click.echo(str(directory))


@main.command("train")
@_common
@click.option("--data", type=click.Path(exists=True, file_okay=False), help="Dataset directory (else generated).")
@click.option("--variant", type=click.Choice(["slp", "baseline"]), default=None)
@click.option("--resume", is_flag=True, help="Continue from <out>/last.ckpt.")
@_exit_codes
def train_cmd(config_path, seed, out, data, variant, resume):
    """Train with random modality dropout; writes best.ckpt, last.ckpt and history.csv."""
    from .plotting import plot_history

    cfg = config_mod.load_config(config_path, seed)
    model_cfg = cfg.model_config(variant)
    if data:
        bundle, dhash = load_bundle(data), dataset_hash(data)
    else:
        bundle, dhash = build_dataset(cfg), cfg.dataset.digest()
    out_dir = _out_dir(out, cfg, model_cfg.variant)
    resume_path = out_dir / "last.ckpt" if resume else None
    if resume and not resume_path.exists():
        raise ConfigError(f"--resume given but {resume_path} does not exist")
    res = train(bundle, model_cfg, cfg.training, out_dir, resume=resume_path, dataset_hash=dhash)
    plot_history(res.history, out_dir / "loss_curve.png")
    click.echo(json.dumps({"out": str(out_dir), "best_epoch": res.best_epoch,
                           "final_train_loss": res.history[-1].train_loss}))


def _save_predictions(model, inputs, scenarios, out_dir: Path, n_bitmaps: int = 4) -> None:
    pred_dir = out_dir / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    for sc in scenarios:
        label = "".join(map(str, sc))
        probs = predict(model, inputs, sc)
        write_arrays(pred_dir / f"probs_{label}.bin", [probs])
        for i, mask in enumerate(binarize(probs[:n_bitmaps])):
            Image.fromarray((mask[0] * 255).astype(np.uint8), mode="L").save(pred_dir / f"{label}_{i:03d}.png")


@main.command("eval")
@_common
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--scenario", default=None, help="Restrict to one availability row, e.g. 1,0,1.")
@click.option("--threshold", type=float, default=0.5, show_default=True)
@_exit_codes
def eval_cmd(config_path, seed, out, checkpoint, data, scenario, threshold):
    """Per-scenario IoU/F1 on the test split."""
    from .plotting import plot_scenarios

    cfg = config_mod.load_config(config_path, seed)
    model, meta = load_model(checkpoint)
    dhash = dataset_hash(data)
    if meta.get("dataset_hash") and dhash and meta["dataset_hash"] != dhash:
        raise ConfigError(f"checkpoint was trained on dataset {meta['dataset_hash']}, not {dhash}")
    bundle = load_bundle(data)
    m = model.cfg.n_modalities
    scenarios = None
    if scenario:
        row = parse_scenario(scenario)
        if len(row) != m:
            raise ConfigError(f"scenario: {scenario!r} needs {m} entries")
        scenarios = [row]
    x, y = bundle.subset("test")
    report = evaluate_scenarios(model, x, y, m, threshold, scenarios, model_id=meta.get("config_hash", ""))
    out_dir = _out_dir(out, cfg, "eval")
    report.write(out_dir)
    plot_scenarios(report, out_dir / "scenario_scores.png")
    _save_predictions(model, x, scenarios or enumerate_scenarios(m), out_dir)
    click.echo(str(out_dir / "report.json"))


@main.command("infogap")
@_common
@click.option("--baseline", "ckpt_base", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--slp", "ckpt_slp", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@_exit_codes
def infogap_cmd(config_path, seed, out, ckpt_base, ckpt_slp, data):
    """Probe-estimated conditional entropy of the decoder input, baseline vs structured."""
    from .plotting import plot_infogap

    cfg = config_mod.load_config(config_path, seed)
    base, _ = load_model(ckpt_base)
    slp, _ = load_model(ckpt_slp)
    if base.cfg.n_modalities != slp.cfg.n_modalities:
        raise ConfigError("baseline and structured checkpoints disagree on the number of modalities")
    bundle = load_bundle(data)
    xtr, ytr = bundle.subset("train")
    xte, yte = bundle.subset("test")
    scenarios = enumerate_scenarios(slp.cfg.n_modalities)
    hb = scenario_entropies(base, xtr, ytr, xte, yte, scenarios, cfg.probe)
    hs = scenario_entropies(slp, xtr, ytr, xte, yte, scenarios, cfg.probe)
    gap = information_gap(hb, hs)
    out_dir = _out_dir(out, cfg, "infogap")
    out_dir.mkdir(parents=True, exist_ok=True)
    gap.write(out_dir / "infogap.json")
    plot_infogap(gap, out_dir / "infogap.png")
    click.echo(str(out_dir / "infogap.json"))


@main.command("theorem1")
@click.option("--instances", type=click.IntRange(min=0), default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_exit_codes
def theorem1_cmd(instances, seed, out):
    """Exact-enumeration sweep of the alignment-penalty inequality."""
    out_dir = Path(out) if out else Path(os.environ.get(OUT_ENV, "runs")) / "theorem1"
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = theorem_sweep(instances, seed)
    path = write_sweep(out_dir / "theorem1_sweep.csv", rows)
    click.echo(f"{path} ({sum(r['holds'] for r in rows)}/{len(rows)} hold)")


if __name__ == "__main__":  # pragma: no cover
    main()
