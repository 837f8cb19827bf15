"""Service entry points: serve the HTTP API or export the token table."""

from __future__ import annotations

import click

from .model import DEFAULT_MODEL, EncoderBackend, ServiceConfig


def _config(model, device, max_batch, pooling, untrained, seed, port=8900) -> ServiceConfig:
    return ServiceConfig(
        model_id=model, device=device, max_batch=max_batch, pooling=pooling,
        untrained=untrained, seed=seed, port=port,
    )


def _model_options(fn):
    opts = [
        click.option("--model", default=DEFAULT_MODEL, show_default=True),
        click.option("--device", default="cpu", show_default=True),
        click.option("--max-batch", type=int, default=32, show_default=True),
        click.option("--pooling", type=click.Choice(["cls", "mean"]), default="cls", show_default=True),
        click.option("--untrained", is_flag=True, default=False,
                     help="Randomly initialized standard-architecture model (offline/deterministic)."),
        click.option("--seed", type=int, default=0, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Masked-language-model encoder sidecar."""


@main.command()
@_model_options
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8900, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
def serve(model, device, max_batch, pooling, untrained, seed, host, port, workers):
    """Run the HTTP service."""
    import uvicorn

    from .app import create_app

    app = create_app(_config(model, device, max_batch, pooling, untrained, seed, port))
    uvicorn.run(app, host=host, port=port, workers=workers, log_level="warning")


@main.command("export-token-table")
@_model_options
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def export_token_table_cmd(model, device, max_batch, pooling, untrained, seed, out_path):
    """Write the vocabulary embedding matrix plus surface/special sidecar."""
    from .export import export_token_table

    backend = EncoderBackend(_config(model, device, max_batch, pooling, untrained, seed))
    rows = export_token_table(backend, out_path)
    click.echo(f"wrote {rows} token rows to {out_path}", err=True)


if __name__ == "__main__":
    main()
