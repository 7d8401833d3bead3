"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad flags, bad input, missing files),
2 internal error. Every command is deterministic given its flags and seed,
so re-running with the same inputs overwrites outputs with identical bytes.
"""

from __future__ import annotations

import dataclasses
import sys
import traceback
from pathlib import Path

import click

from . import __version__
from .config import load_config, preset, serialize_config
from .data import SyntheticSpec, generate_synthetic, load_synthetic, save_synthetic
from .errors import CrossViewError


def _resolve_config(config_path, preset_name, seed, precision, epochs=None,
                    batch_size=None):
    if config_path is not None:
        cfg = load_config(config_path)
    else:
        cfg = preset(preset_name or "toy")
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if precision is not None:
        overrides["precision"] = int(precision)
    if epochs is not None:
        overrides["epochs"] = epochs
    if batch_size is not None:
        overrides["batch_size"] = batch_size
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg.validate()


@click.group()
@click.version_option(__version__)
def cli():
    """Cross-view image retrieval: dataset tools, training, evaluation,
    and ablation sweeps."""


@cli.command()
@click.option("--count", type=int, required=True, help="Number of scene pairs.")
@click.option("--seed", type=int, default=0, envvar="CROSSVIEW_SEED", show_default=True)
@click.option("--noise-level", type=float, default=0.02, show_default=True)
@click.option("--scene-complexity", type=int, default=4, show_default=True)
@click.option("--aerial-size", type=int, default=32, show_default=True)
@click.option("--ground-size", type=(int, int), default=(16, 64), show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True,
              envvar="CROSSVIEW_OUT")
def synth(count, seed, noise_level, scene_complexity, aerial_size, ground_size, out):
    """Generate a deterministic synthetic paired dataset."""
    spec = SyntheticSpec(
        count=count,
        seed=seed,
        noise_level=noise_level,
        scene_complexity=scene_complexity,
        aerial_size=aerial_size,
        ground_size=tuple(ground_size),
    )
    split = generate_synthetic(spec)
    manifest = save_synthetic(split, spec, out)
    click.echo(f"wrote {count} pairs; manifest: {manifest}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--preset", "preset_name", type=click.Choice(["toy", "paper"]))
@click.option("--data", type=click.Path(exists=True, path_type=Path), required=True,
              envvar="CROSSVIEW_DATA")
@click.option("--out", type=click.Path(path_type=Path), required=True,
              envvar="CROSSVIEW_OUT")
@click.option("--seed", type=int, default=None, envvar="CROSSVIEW_SEED")
@click.option("--resume", type=click.Path(exists=True, path_type=Path))
@click.option("--precision", type=click.Choice(["32", "64"]), default=None)
@click.option("--epochs", type=int, default=None, help="Override epoch count.")
@click.option("--batch-size", type=int, default=None)
def train(config_path, preset_name, data, out, seed, resume, precision, epochs,
          batch_size):
    """Train on a synthetic dataset directory; writes checkpoints, a JSONL
    loss log, and a loss-curve figure."""
    from .reporting import write_loss_curve
    from .training import fit

    cfg = _resolve_config(config_path, preset_name, seed, precision, epochs,
                          batch_size)
    split = load_synthetic(data)
    click.echo(f"training on {len(split)} pairs for {cfg.epochs} epochs "
               f"(batch {cfg.batch_size}, lr {cfg.lr})")
    out = Path(out)
    checkpoint = fit(split, cfg, out, resume=resume)
    (out / "config.yaml").write_text(serialize_config(cfg), encoding="utf-8")
    fig = write_loss_curve(out / "train_log.jsonl", out)
    click.echo(f"final checkpoint: {checkpoint.path}")
    click.echo(f"loss curve: {fig}")


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--data", type=click.Path(exists=True, path_type=Path), required=True,
              envvar="CROSSVIEW_DATA")
@click.option("--out", type=click.Path(path_type=Path), required=True,
              envvar="CROSSVIEW_OUT")
def eval_cmd(checkpoint, data, out):
    """Evaluate retrieval recall and complexity; emits JSON/TSV/text
    reports plus a recall bar chart."""
    from .evaluation import complexity_report, extract_all_descriptors, recall_at_k
    from .reporting import format_table, write_recall_report
    from .training import load_checkpoint, restore_model

    state = load_checkpoint(checkpoint)
    model, cfg = restore_model(state)
    model.eval()
    split = load_synthetic(data, role="test")
    ground, aerial = extract_all_descriptors(split, model, cfg.model)
    report = recall_at_k(ground, aerial)
    complexity = complexity_report(model, cfg.model)
    paths = write_recall_report(report, complexity, out)
    headers = [f"r@{m}" for m in ("1", "5", "10", "1%")]
    click.echo(format_table(headers, [[f"{report.r_at[m]:.2f}"
                                       for m in ("1", "5", "10", "1%")]]))
    for p in paths:
        click.echo(f"wrote {p}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--preset", "preset_name", type=click.Choice(["toy", "paper"]))
@click.option("--data", type=click.Path(exists=True, path_type=Path), required=True,
              envvar="CROSSVIEW_DATA")
@click.option("--eval-data", type=click.Path(exists=True, path_type=Path),
              help="Held-out dataset; defaults to evaluating on --data.")
@click.option("--out", type=click.Path(path_type=Path), required=True,
              envvar="CROSSVIEW_OUT")
@click.option("--seed", type=int, default=None, envvar="CROSSVIEW_SEED")
@click.option("--seeds", type=int, default=1, show_default=True,
              help="Number of seeds per variant (seed, seed+1, ...).")
@click.option("--precision", type=click.Choice(["32", "64"]), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--steps", "step_grid", type=str, default="1,3,6,9", show_default=True,
              help="Comma-separated recurrence depths for the sweep table.")
def ablate(config_path, preset_name, data, eval_data, out, seed, seeds, precision,
           epochs, step_grid):
    """Run the ablation grids (candidate comparison and recurrence-depth
    sweep) end to end and emit comparison tables plus a figure."""
    from .ablation import run_cmi_comparison, run_step_comparison
    from .reporting import format_table, write_ablation_tables

    cfg = _resolve_config(config_path, preset_name, seed, precision, epochs)
    depths = tuple(int(s) for s in step_grid.split(",") if s.strip())
    if not depths or any(d < 1 for d in depths):
        raise click.UsageError(f"invalid --steps grid: {step_grid!r}")
    train_split = load_synthetic(data)
    eval_split = load_synthetic(eval_data, role="test") if eval_data else train_split
    seed_list = tuple(cfg.seed + i for i in range(max(1, seeds)))
    out = Path(out)
    cmi_rows = run_cmi_comparison(cfg, train_split, eval_split, out / "runs",
                                  seeds=seed_list)
    step_rows = run_step_comparison(cfg, train_split, eval_split, out / "runs",
                                    steps=depths, seeds=seed_list)
    paths = write_ablation_tables(cmi_rows, step_rows, out)
    for p in paths:
        click.echo(f"wrote {p}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:  # --help / --version
        return exc.exit_code
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except CrossViewError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (KeyboardInterrupt, click.Abort):
        print("aborted", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc(file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
