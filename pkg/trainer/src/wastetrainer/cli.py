"""Trainer command line: fit on a manifest, export the portable model."""

from __future__ import annotations

import json
import sys

import click

from wastetrainer import __version__
from wastetrainer.config import TrainerConfig


@click.group()
@click.version_option(__version__)
def cli():
    """Tile classifier training and export."""


@cli.command("fit")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--images", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", default="trainer_runs", type=click.Path(file_okay=False))
@click.option("--epochs", default=None, type=int, help="override config epochs")
@click.option("--seed", default=None, type=int, help="override config seed")
def fit(manifest, images, config_path, out_dir, epochs, seed):
    from wastetrainer.train import train

    config = TrainerConfig.from_file(config_path) if config_path else TrainerConfig()
    if epochs is not None:
        config.epochs = epochs
    if seed is not None:
        config.seed = seed
    ckpt, log = train(manifest, images, config, out_dir)
    best = max(e["val_f1_waste"] for e in log)
    click.echo(f"checkpoint: {ckpt}")
    click.echo(json.dumps({"epochs_run": len(log), "best_val_f1_waste": best}, sort_keys=True))


@cli.command("export")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def export(checkpoint, out_path):
    from wastetrainer.export import export_portable

    path = export_portable(checkpoint, out_path)
    click.echo(f"portable model: {path}")


def main():
    try:
        cli(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except (ValueError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
