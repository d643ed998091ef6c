"""Command-line interface: `export` batch jobs and the `rerank` plug-in mode.

Exit codes: 0 success, 2 usage error, 3 bad input (unreadable image or
malformed plug-in request), 4 backend unavailable.
"""
from __future__ import annotations

import json
import sys

import click

from . import __version__
from .backends import make_backend
from .errors import BadImage, InvalidJob, ModelUnavailable
from .jobs import ExportJob, run_export
from .rerank import handle_request

EXIT_INPUT = 3
EXIT_MODEL = 4


@click.group()
@click.version_option(__version__)
def main():
    """Export embeddings, feature maps, and masks for the grasp-transfer engine."""


@main.command("export")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--text", default="", help="Task text to embed alongside the image.")
@click.option(
    "--outputs",
    default="embedding,feature_map,mask",
    show_default=True,
    help="Comma-separated subset of embedding,feature_map,mask.",
)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--backend", default="stats", show_default=True, type=click.Choice(["stats", "neural"]))
@click.option("--weights-dir", default="", help="Model weights directory for the neural backend.")
def export_cmd(image_path, text, outputs, out_dir, backend, weights_dir):
    """Run one export job over IMAGE into OUT."""
    try:
        job = ExportJob(
            image_path=image_path,
            out_dir=out_dir,
            text=text,
            outputs=tuple(o.strip() for o in outputs.split(",") if o.strip()),
        )
    except InvalidJob as e:
        raise click.UsageError(str(e))
    try:
        manifest = run_export(job, make_backend(backend, weights_dir))
    except BadImage as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_INPUT)
    except ModelUnavailable as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_MODEL)
    click.echo(f"wrote {', '.join(manifest['outputs'].values())} to {out_dir}")


@main.command("rerank")
def rerank_cmd():
    """Plug-in mode: read a request JSON on stdin, write the reply to stdout."""
    try:
        doc = json.load(sys.stdin)
        reply = handle_request(doc)
    except (ValueError, TypeError) as e:
        click.echo(f"error: malformed re-rank request: {e}", err=True)
        sys.exit(EXIT_INPUT)
    click.echo(json.dumps(reply))


if __name__ == "__main__":
    main()
