"""CLI interface for the QxQ demosaicing toolkit."""

from pathlib import Path
from typing import Optional

import click
import yaml

from .cfa import CfaSpec, MosaicImage, center_crop, crop_to_period, mosaic
from .config import Config, ensure_config_exists
from .datapipe import DatasetManifest, PatchDataset, build_hybrid, synthesize_sources
from .db import Database
from .errors import DataError, QxqError, StateError
from .evaluate import evaluate_method, summary_table, write_report
from .inference import demosaic_frame
from .rawio import (
    RgbImage,
    black_level_compensate,
    decode_3ccd,
    decode_qxq,
    export_gray_png8,
    export_png8,
    read_raw,
)
from .runner import FINAL_CHECKPOINT, TrainingRunner
from .storage import CheckpointStore, load_network
from .utils import (
    format_number,
    format_relative_time,
    format_timestamp,
    generate_run_name,
    sanitize_run_name,
    setup_logging,
)


def get_config(ctx: click.Context) -> Config:
    """Get configuration from context."""
    return ctx.obj["config"]


def get_db(ctx: click.Context) -> Database:
    """Get the run registry from context, opening it on first use."""
    if ctx.obj.get("db") is None:
        db = Database(get_config(ctx).storage.database_path)
        db.initialize()
        ctx.obj["db"] = db
        ctx.call_on_close(db.close)
    return ctx.obj["db"]


def resolve_checkpoint(path: str) -> Path:
    """A checkpoint file, or the final checkpoint of a run directory."""
    p = Path(path)
    if p.is_dir():
        return p / "checkpoints" / f"{FINAL_CHECKPOINT}.ckpt.gz"
    return p


def parse_epochs(value: Optional[str]) -> Optional[list]:
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated epochs, got '{value}'") from None


class QxqGroup(click.Group):
    """Reports library errors as a single ``ErrorClass: message`` line and exits 1."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except (QxqError, OSError) as e:
            click.echo(f"{type(e).__name__}: {e}", err=True)
            ctx.exit(1)


@click.group(cls=QxqGroup)
@click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(),
    help="Path to configuration file.",
)
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str]):
    """QxQ demosaicing - convert RAW frames, build datasets, train, evaluate and demosaic."""
    ctx.ensure_object(dict)

    if config_path and ctx.invoked_subcommand == "config" and not Path(config_path).exists():
        # `config init -c new.yaml` names a file that does not exist yet
        config = Config()
    else:
        config = Config.load(config_path)
    ctx.obj["config"] = config
    ctx.obj["config_path"] = config_path
    setup_logging(config.logging)


@cli.command()
@click.argument("raw_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(["3ccd", "qxq"]), required=True, help="RAW layout.")
@click.option("--width", type=int, help="Frame width in pixels. Uses dataset.raw_width if not specified.")
@click.option("--height", type=int, help="Frame height in pixels. Uses dataset.raw_height if not specified.")
@click.option("--cfa", "cfa_text", help="CFA of a qxq frame (e.g. qxq, bayer, '4,GRBG'). Uses model.cfa if not specified.")
@click.option("--big-endian", is_flag=True, help="Samples are big-endian.")
@click.option("--out", "-o", type=click.Path(), help="Output PNG (default: next to the RAW file).")
@click.option("--mosaic", "mosaic_cfa", help="Also write a single-channel mosaic PNG for this CFA (3ccd only).")
@click.pass_context
def convert(
    ctx: click.Context,
    raw_path: str,
    kind: str,
    width: Optional[int],
    height: Optional[int],
    cfa_text: Optional[str],
    big_endian: bool,
    out: Optional[str],
    mosaic_cfa: Optional[str],
):
    """Decode a RAW frame and write a normalized PNG preview."""
    config = get_config(ctx)
    width = width or config.dataset.raw_width
    height = height or config.dataset.raw_height
    black_level = config.dataset.black_level
    out_path = Path(out) if out else Path(raw_path).with_suffix(".png")
    data = read_raw(raw_path)

    try:
        if kind == "3ccd":
            frame = decode_3ccd(data, width, height, little_endian=not big_endian, black_level=black_level)
        else:
            cfa = CfaSpec.parse(cfa_text or config.model.cfa)
            frame = decode_qxq(data, width, height, cfa, little_endian=not big_endian, black_level=black_level)
    except QxqError as e:
        raise type(e)(f"{raw_path}: {e}") from None

    if kind == "3ccd":
        rgb = frame.to_rgb()
        export_png8(rgb, out_path)
        click.echo(f"Wrote {out_path} ({width}x{height} RGB)")
        if mosaic_cfa:
            cfa = CfaSpec.parse(mosaic_cfa)
            m = mosaic(RgbImage(crop_to_period(rgb.data, cfa)), cfa)
            mosaic_path = out_path.with_name(f"{out_path.stem}.mosaic.png")
            export_gray_png8(m.plane, mosaic_path)
            click.echo(f"Wrote {mosaic_path} ({m.width}x{m.height} {cfa} mosaic)")
    else:
        export_gray_png8(frame.to_mosaic().plane, out_path)
        click.echo(f"Wrote {out_path} ({width}x{height} {frame.cfa} mosaic)")


@cli.command()
@click.argument("directory", type=click.Path(file_okay=False))
@click.option("--count", type=int, default=2, show_default=True, help="Files per source kind.")
@click.option("--size", type=int, default=128, show_default=True, help="Square image size.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_context
def synthesize(ctx: click.Context, directory: str, count: int, size: int, seed: int):
    """Write synthetic 3CCD RAW and PNG sources for smoke runs."""
    config = get_config(ctx)
    dirs = synthesize_sources(
        directory, count, size, seed, black_level=config.dataset.black_level, gamma=config.dataset.gamma
    )
    click.echo(f"Wrote {count} RAW files to {dirs['3ccd']} and {count} PNGs to {dirs['common']}")
    click.echo(f"  RAW geometry: {size}x{size} (set dataset.raw_width/raw_height accordingly)")


@cli.command("build-dataset")
@click.option("--3ccd", "dir_3ccd", type=click.Path(file_okay=False), help="Directory of 3CCD .RAW files.")
@click.option("--common", "dir_common", type=click.Path(file_okay=False), help="Directory of PNG/JPEG images.")
@click.option("--out", "-o", type=click.Path(), help="Manifest path. Uses dataset.manifest if not specified.")
@click.option("--cfa", "cfa_text", help="CFA used to mosaic patches. Uses model.cfa if not specified.")
@click.option("--patch-size", type=int, help="Patch size in pixels.")
@click.option("--stride", type=int, help="Patch stride in pixels.")
@click.option("--threshold", type=float, help="Minimum mean per-channel variance of a kept patch.")
@click.option("--split-ratio", type=float, help="Share of source images in the train split.")
@click.option("--raw-width", type=int, help="3CCD frame width.")
@click.option("--raw-height", type=int, help="3CCD frame height.")
@click.option("--seed", type=int, help="Split seed.")
@click.option("--workers", type=int, help="Parallel file scanners.")
@click.pass_context
def build_dataset(
    ctx: click.Context,
    dir_3ccd: Optional[str],
    dir_common: Optional[str],
    out: Optional[str],
    cfa_text: Optional[str],
    patch_size: Optional[int],
    stride: Optional[int],
    threshold: Optional[float],
    split_ratio: Optional[float],
    raw_width: Optional[int],
    raw_height: Optional[int],
    seed: Optional[int],
    workers: Optional[int],
):
    """Crop, filter and split source images into a patch manifest."""
    config = get_config(ctx)
    overrides = {
        "dir_3ccd": dir_3ccd,
        "dir_common": dir_common,
        "manifest": out,
        "patch_size": patch_size,
        "stride": stride,
        "variance_threshold": threshold,
        "split_ratio": split_ratio,
        "raw_width": raw_width,
        "raw_height": raw_height,
        "split_seed": seed,
        "workers": workers,
    }
    config.update("dataset", {k: v for k, v in overrides.items() if v is not None})
    ds = config.dataset
    if not ds.dir_3ccd and not ds.dir_common:
        raise DataError("no source directories given (--3ccd and/or --common)")

    manifest_path = Path(ds.manifest)
    manifest = build_hybrid(
        ds.dir_3ccd,
        ds.dir_common,
        CfaSpec.parse(cfa_text or config.model.cfa),
        split_ratio=ds.split_ratio,
        seed=ds.split_seed,
        settings=ds.source_settings(),
        root=manifest_path.parent,
        workers=ds.workers,
    )
    manifest.save(manifest_path)

    stats = manifest.stats
    click.echo(f"Wrote {manifest_path}")
    click.echo(f"  Sources: {stats['sources']} ({stats['unreadable']} unreadable)")
    click.echo(f"  Patches: {format_number(stats['kept'])} kept of {format_number(stats['candidates'])} candidates")
    click.echo(f"  Split: {format_number(stats['train'])} train / {format_number(stats['test'])} test")


@cli.command()
@click.option("--name", "-n", help="Run name. Generated from mode and seed if not specified.")
@click.option("--seed", type=int, help="Training seed.")
@click.option("--mode", type=click.Choice(["saturation", "schedule", "fixed", "solo"]), help="Teacher switching mode.")
@click.option("--sigma", type=float, help="Saturation variance threshold.")
@click.option("--switch-epochs", help="Comma-separated schedule epochs, e.g. 7,20.")
@click.option("--epochs", type=int, help="Level-0 epoch budget.")
@click.option("--level1-epochs", type=int, help="Level-1 pretraining epochs.")
@click.option("--alpha", type=float, help="Distillation loss weight.")
@click.option("--manifest", type=click.Path(), help="Dataset manifest. Uses dataset.manifest if not specified.")
@click.option("--teacher-bank", type=click.Path(file_okay=False), help="Reuse the teacher bank of this run directory.")
@click.option("--resume", is_flag=True, help="Continue a paused or interrupted run.")
@click.option(
    "--run-root",
    envvar="QXQ_RUN_ROOT",
    type=click.Path(file_okay=False),
    help="Directory holding run directories. Uses storage.run_root if not specified.",
)
@click.pass_context
def train(
    ctx: click.Context,
    name: Optional[str],
    seed: Optional[int],
    mode: Optional[str],
    sigma: Optional[float],
    switch_epochs: Optional[str],
    epochs: Optional[int],
    level1_epochs: Optional[int],
    alpha: Optional[float],
    manifest: Optional[str],
    teacher_bank: Optional[str],
    resume: bool,
    run_root: Optional[str],
):
    """Train a student: level 1, teacher bank, then level-0 distillation."""
    config = get_config(ctx)
    db = get_db(ctx)
    run_root = run_root or config.storage.run_root

    if resume:
        if not name:
            raise click.UsageError("--resume needs --name")
        name = sanitize_run_name(name)
        run = db.get_run(name)
        if run is None:
            raise StateError(f"run '{name}' not found")
        runner = TrainingRunner(config, db, run_root)
        runner.config = runner.load_run_config(name)
        click.echo(f"Resuming run: {name} ({run.stage}, epoch {run.epoch}, {run.status})")
    else:
        config.update("train", {k: v for k, v in {"seed": seed, "level1_epochs": level1_epochs}.items() if v is not None})
        config.update(
            "distill",
            {
                k: v
                for k, v in {
                    "mode": mode,
                    "sigma": sigma,
                    "switch_epochs": parse_epochs(switch_epochs),
                    "epochs": epochs,
                }.items()
                if v is not None
            },
        )
        if alpha is not None:
            config.update("loss", {"alpha": alpha})
        config.update("dataset", {"manifest": str(Path(manifest or config.dataset.manifest).resolve())})
        d = config.distill
        name = sanitize_run_name(name or generate_run_name(d.mode, config.train.seed, d.sigma))
        runner = TrainingRunner(config, db, run_root)
        runner.create_run(name)
        click.echo(f"Created run: {name} in {runner.run_dir(name)}")

    runner.set_progress_callback(click.echo)
    completed = runner.run(name, teacher_bank=teacher_bank)
    if completed:
        click.echo(f"Run '{name}' completed. Final checkpoint: {runner.store(name).base_path}")
    else:
        click.echo(f"Run '{name}' paused. Continue with: qxq-demosaic train --resume --name {name}")


@cli.command("eval")
@click.argument("checkpoint")
@click.option("--manifest", type=click.Path(), help="Dataset manifest. Uses dataset.manifest if not specified.")
@click.option("--split", default="test", show_default=True, help="Manifest split to score.")
@click.option("--baseline", type=click.Choice(["classical"]), multiple=True, help="Add a baseline row.")
@click.option("--out", "-o", type=click.Path(), help="Write the TSV table here (plus <out>.per_image.tsv).")
@click.option("--workers", type=int, default=1, show_default=True, help="Parallel image scorers.")
@click.pass_context
def eval_cmd(
    ctx: click.Context,
    checkpoint: str,
    manifest: Optional[str],
    split: str,
    baseline: tuple,
    out: Optional[str],
    workers: int,
):
    """Score a checkpoint (or 'classical') with PSNR and MS-SSIM."""
    config = get_config(ctx)
    m = DatasetManifest.load(manifest or config.dataset.manifest)

    methods = []
    if checkpoint == "classical":
        methods.append(("classical", "classical", m.cfa))
    else:
        net = load_network(resolve_checkpoint(checkpoint))
        methods.append((net.kind, net, net.cfg.cfa))
    methods.extend((name, name, m.cfa) for name in baseline if name != checkpoint)

    rows, scores = [], []
    for label, method, cfa in methods:
        dataset = PatchDataset(m, split, cfa)
        summary, per_image = evaluate_method(label, method, dataset, workers=workers)
        rows.append(summary)
        scores.extend(per_image)

    click.echo(summary_table(rows), nl=False)
    if out:
        table_path, per_image_path = write_report(rows, scores, out)
        click.echo(f"Wrote {table_path} and {per_image_path}", err=True)


@cli.command()
@click.argument("method")
@click.argument("raw_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", type=click.Path(), help="Output PNG (default: <raw>.demosaiced.png).")
@click.option("--width", type=int, help="Frame width. Uses dataset.raw_width if not specified.")
@click.option("--height", type=int, help="Frame height. Uses dataset.raw_height if not specified.")
@click.option("--cfa", "cfa_text", help="Frame CFA. Uses the checkpoint's CFA (or model.cfa) if not specified.")
@click.option("--big-endian", is_flag=True, help="Samples are big-endian.")
@click.option("--tile", type=int, help="Tile size for large frames. Uses inference.tile if not specified.")
@click.option("--overlap", type=int, help="Tile overlap. Uses inference.overlap if not specified.")
@click.option("--center-crop", "crop_size", type=int, help="Demosaic only a centered square of this size (a multiple of the CFA period).")
@click.pass_context
def demosaic(
    ctx: click.Context,
    method: str,
    raw_path: str,
    out: Optional[str],
    width: Optional[int],
    height: Optional[int],
    cfa_text: Optional[str],
    big_endian: bool,
    tile: Optional[int],
    overlap: Optional[int],
    crop_size: Optional[int],
):
    """Demosaic a QxQ RAW frame with a checkpoint or the 'classical' baseline."""
    config = get_config(ctx)
    fn = "classical" if method == "classical" else load_network(resolve_checkpoint(method))
    if cfa_text:
        cfa = CfaSpec.parse(cfa_text)
    elif method != "classical":
        cfa = fn.cfg.cfa
    else:
        cfa = CfaSpec.parse(config.model.cfa)

    width = width or config.dataset.raw_width
    height = height or config.dataset.raw_height
    try:
        frame = decode_qxq(
            read_raw(raw_path), width, height, cfa, little_endian=not big_endian, black_level=config.dataset.black_level
        )
    except QxqError as e:
        raise type(e)(f"{raw_path}: {e}") from None
    if crop_size:
        m = MosaicImage(center_crop(black_level_compensate(frame.plane, frame.black_level), cfa, crop_size), cfa)
    else:
        m = frame.to_mosaic()

    tile = tile if tile is not None else config.inference.tile
    overlap = overlap if overlap is not None else config.inference.overlap
    rgb = demosaic_frame(m, fn, tile=tile, overlap=overlap)
    out_path = Path(out) if out else Path(raw_path).with_suffix(".demosaiced.png")
    export_png8(rgb, out_path)
    click.echo(f"Wrote {out_path} ({m.width}x{m.height})")


@cli.command()
@click.option("--name", "-n", help="Show status for a specific run.")
@click.pass_context
def status(ctx: click.Context, name: Optional[str]):
    """Show status of training runs."""
    db = get_db(ctx)

    if name:
        run = db.get_run(name)
        if not run:
            raise StateError(f"run '{name}' not found")
        runs = [run]
    else:
        runs = db.get_all_runs()

    if not runs:
        click.echo("No training runs found.")
        return

    click.echo("Training Runs:")
    click.echo("-" * 60)
    for run in runs:
        last_update = format_relative_time(run.updated_at) if run.updated_at else "Never"
        click.echo(f"  Run: {run.name}")
        click.echo(f"    Status: {run.status}")
        click.echo(f"    Stage: {run.stage or '-'}  Phase: {run.phase or '-'}  Epoch: {run.epoch}")
        click.echo(f"    Directory: {run.run_dir}")
        stats = CheckpointStore(str(Path(run.run_dir) / "checkpoints")).get_stats()
        if stats["total_files"]:
            click.echo(f"    Checkpoints: {stats['total_files']} ({stats['total_size_mb']:.1f} MB)")
        click.echo(f"    Last Update: {last_update}")
        if name:
            for entry in db.get_logs(run.name, limit=10):
                click.echo(f"    {format_timestamp(entry.timestamp)} [{entry.level}] {entry.message}")
        click.echo()


@cli.command()
@click.option("--name", "-n", help="Name of the run to remove.")
@click.option("--all", "all_runs", is_flag=True, help="Remove every registered run.")
@click.pass_context
def remove(ctx: click.Context, name: Optional[str], all_runs: bool):
    """Remove runs from the registry (run directories stay on disk)."""
    db = get_db(ctx)

    if all_runs:
        runs = db.get_all_runs()
        if not runs:
            click.echo("No runs to remove.")
            return
        for run in runs:
            db.delete_run(run.name)
            click.echo(f"Removed run: {run.name}")
        click.echo(f"Removed {len(runs)} run(s).")
        return

    if not name:
        raise click.UsageError("specify --name or --all")
    if not db.delete_run(name):
        raise StateError(f"run '{name}' not found")
    click.echo(f"Removed run: {name}")
    click.echo("Note: the run directory and its checkpoints remain on disk.")


@cli.group()
def config():
    """Manage configuration."""
    pass


@config.command("show")
@click.pass_context
def config_show(ctx: click.Context):
    """Show current configuration."""
    cfg = get_config(ctx)
    click.echo(yaml.dump(cfg.to_dict(), default_flow_style=False, sort_keys=False))


@config.command("init")
@click.pass_context
def config_init(ctx: click.Context):
    """Write a default config file if none exists."""
    path = ensure_config_exists(ctx.obj.get("config_path"))
    click.echo(f"Config file: {path}")


def main():
    """Main entry point."""
    cli()


if __name__ == "__main__":
    main()
