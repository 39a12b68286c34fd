"""Command-line wrapper around the feature exporter."""

from __future__ import annotations

import logging
import sys

import click

from .backbone import WeightsUnavailableError, load_backbone
from .export import ExportSpec, export_features
from .images import DatasetUnavailableError


@click.command()
@click.option("--source", required=True,
              help="Image directory (class per subdirectory) or cifar10[-test].")
@click.option("--out", "output_path", required=True, help="Output FMAT file.")
@click.option("--model-size", type=click.Choice(["base", "large"]), default="base")
@click.option("--backbone", "backbone_kind",
              type=click.Choice(["dinov2", "stub"]), default="dinov2",
              help="'stub' is a deterministic offline stand-in for dry runs.")
@click.option("--batch-size", type=int, default=16)
@click.option("--limit", type=int, default=None,
              help="Stratified subsample cap on the number of images.")
@click.option("--seed", type=int, default=0)
def main(source, output_path, model_size, backbone_kind, batch_size, limit, seed):
    """Export pooled deep features from images to the FMAT format."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    spec = ExportSpec(source=source, output_path=output_path,
                      model_size=model_size, batch_size=batch_size,
                      limit=limit, seed=seed)
    try:
        backbone = load_backbone(model_size, kind=backbone_kind)
        manifest = export_features(spec, backbone=backbone)
    except (WeightsUnavailableError, DatasetUnavailableError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    except (FileNotFoundError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(
        f"wrote {manifest['n_exported']} x {manifest['feature_dim']} features "
        f"to {manifest['output']} (model {manifest['model_id']})"
    )


if __name__ == "__main__":
    main()
