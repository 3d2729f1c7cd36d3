"""Command-line surface: each pipeline stage is its own subcommand.

    generate        render a synthetic HR event to an rnb container
    degrade         derive the LR member and write an hr/lr pair
    downscale       run a classical baseline over a pair's LR side
    evaluate        score a prediction against observations (JSON report)
    export-inputs   write one fold's LR inputs + manifest for an external model
    score-external  score externally produced predictions
    crossval        leave-one-year-out run over a dataset directory
    report          render leaderboard / scatter documents from results.json

Every MetricConfig/ClusterConfig/baseline parameter is a flag; a JSON
config file (``--config``) can hold the same keys (flag wins over file,
file wins over environment). ``PRECIPEVAL_DATA_ROOT`` provides the
default dataset root. Exit codes: 0 ok, 2 invalid input, 3 data error,
4 internal error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
from click.core import ParameterSource

from .cluster import ClusterConfig
from .errors import DataError, LayoutMismatch, ValidationError
from .grid import GridGeometry
from .harness import (
    BaselineParams,
    IoOptions,
    LeaderboardRow,
    crossval as run_crossval,
    export_inputs as do_export_inputs,
    leaderboard as render_leaderboard,
    make_folds,
    run_external,
    scatter_csv,
    scatter_points,
    scatter_svg,
)
from .io_container import build_index, read_pair, read_sequences, write_pair, write_sequences
from .metrics import AmoTable, MetricConfig, MetricReport, field_derivative_diagnostics, evaluate
from .synth import DESK_FACTOR, EventConfig, SensorConfig, generate_event, degrade as degrade_seq
from .harness import predict_sequence

_EXIT_VALIDATION = 2
_EXIT_DATA = 3
_EXIT_INTERNAL = 4


def _load_config_file(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read config file {path}: {exc}")


def _resolve(ctx, cfg: dict, **values):
    """flag > config file > environment > declared default."""
    out = {}
    for name, value in values.items():
        source = ctx.get_parameter_source(name)
        if source == ParameterSource.COMMANDLINE or name not in cfg:
            out[name] = value
        else:
            out[name] = cfg[name]
    return out


def _config_option(fn):
    return click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
        default=None, help="JSON file holding flag defaults.",
    )(fn)


def _metric_options(fn):
    opts = [
        click.option("--quantile-tau", type=float, default=0.999, show_default=True,
                     help="Top quantile for the peak-precipitation metric."),
        click.option("--heavy-threshold", type=float, default=10.0, show_default=True,
                     help="Heavy-rain rate floor (mm/hour)."),
        click.option("--rain-threshold", type=float, default=1.0, show_default=True,
                     help="Cluster membership rate floor (mm/hour)."),
        click.option("--connectivity", type=click.Choice(["4", "8"]), default="8",
                     show_default=True, help="Cluster pixel connectivity."),
        click.option("--main-by", type=click.Choice(["mass", "pixel_count"]), default="mass",
                     show_default=True, help="Main-cluster selection key."),
        click.option("--amo-mppe", type=float, default=64.0, show_default=True),
        click.option("--amo-hrre", type=float, default=533.0, show_default=True),
        click.option("--amo-ammd", type=float, default=0.64, show_default=True),
        click.option("--amo-cpmse", type=float, default=332.0, show_default=True),
        click.option("--amo-hrts", type=float, default=15.0, show_default=True),
        click.option("--amo-cmd", type=float, default=26.0, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _baseline_options(fn):
    opts = [
        click.option("--kernel-a", type=float, default=-0.5, show_default=True,
                     help="Cubic convolution kernel parameter."),
        click.option("--neighborhood-k", type=int, default=16, show_default=True,
                     help="Kriging neighborhood size."),
        click.option("--variogram", type=click.Choice(["exponential", "spherical", "gaussian"]),
                     default="exponential", show_default=True),
        click.option("--baseline-seed", type=int, default=0, show_default=True,
                     help="Seed for variogram pair subsampling."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _io_options(fn):
    opts = [
        click.option("--hdf5-hr-name", default="hr", show_default=True,
                     help="HR dataset name inside HDF5 pair files."),
        click.option("--hdf5-lr-name", default="lr", show_default=True,
                     help="LR dataset name inside HDF5 pair files."),
        click.option("--sentinel", type=float, default=None,
                     help="Negative no-data marker to zero out on read."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _metric_config(v: dict) -> MetricConfig:
    return MetricConfig(
        quantile_tau=v["quantile_tau"],
        heavy_threshold=v["heavy_threshold"],
        cluster=ClusterConfig(
            rain_threshold=v["rain_threshold"],
            connectivity=int(v["connectivity"]),
            main_by=v["main_by"],
        ),
        amo=AmoTable(
            mppe=v["amo_mppe"], hrre=v["amo_hrre"], ammd=v["amo_ammd"],
            cpmse=v["amo_cpmse"], hrts=v["amo_hrts"], cmd=v["amo_cmd"],
        ),
    )


def _baseline_params(v: dict) -> BaselineParams:
    return BaselineParams(
        kernel_a=v["kernel_a"],
        neighborhood_k=v["neighborhood_k"],
        variogram=v["variogram"],
        seed=v["baseline_seed"],
    )


def _io_opts(v: dict) -> IoOptions:
    return IoOptions(
        hdf5_hr_name=v["hdf5_hr_name"],
        hdf5_lr_name=v["hdf5_lr_name"],
        sentinel=v["sentinel"],
    )


def _read_obs(path, io: IoOptions):
    """Observation sequence from a pair container (HR side) or a
    single-sequence container."""
    if Path(path).suffix.lower() in (".h5", ".hdf5"):
        hr, _ = read_pair(path, source="hdf5", hdf5_hr_name=io.hdf5_hr_name,
                          hdf5_lr_name=io.hdf5_lr_name, sentinel=io.sentinel)
        return hr
    seqs = read_sequences(path, sentinel=io.sentinel)
    return seqs[0]


@click.group(name="precipeval")
@click.version_option(package_name="precipeval")
def cli():
    """Precipitation-downscaling evaluation toolkit."""


@cli.command()
@click.option("--template", type=click.Choice(["hurricane", "squall"]), default=None,
              help="Built-in event family (ignored when --event-config is given).")
@click.option("--event-config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON event description (geometry, cells or template).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--frames", type=int, default=48, show_default=True)
@click.option("--rows", type=int, default=96, show_default=True)
@click.option("--cols", type=int, default=96, show_default=True)
@click.option("--pixel-size-km", type=float, default=4.0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def generate(template, event_config, seed, frames, rows, cols, pixel_size_km, out):
    """Render a synthetic HR event into a single-sequence rnb container."""
    if event_config is not None:
        config = EventConfig.from_json(Path(event_config).read_text())
    else:
        if template is None:
            raise click.UsageError("pass --template or --event-config")
        config = EventConfig(
            geometry=GridGeometry(rows=rows, cols=cols, pixel_size_km=pixel_size_km),
            n_frames=frames,
            template=template,
        )
    hr, _truth = generate_event(config, seed=seed)
    write_sequences(out, [hr])
    click.echo(f"wrote {len(hr)} HR frames ({hr.geometry.rows}x{hr.geometry.cols}) to {out}")


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="HR container (single sequence, or a pair whose HR side is used).")
@click.option("--factor", type=int, default=DESK_FACTOR, show_default=True)
@click.option("--gain", type=float, default=1.0, show_default=True)
@click.option("--noise-sigma", type=float, default=0.0, show_default=True)
@click.option("--blur-sigma-km", type=float, default=0.0, show_default=True)
@click.option("--shift-dx-km", type=float, default=0.0, show_default=True)
@click.option("--shift-dy-km", type=float, default=0.0, show_default=True)
@click.option("--time-offset-hours", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def degrade(in_path, factor, gain, noise_sigma, blur_sigma_km, shift_dx_km, shift_dy_km,
            time_offset_hours, seed, out):
    """Derive the LR member from an HR sequence and write the hr/lr pair."""
    hr = read_sequences(in_path)[0]
    sensor = SensorConfig(
        blur_sigma_km=blur_sigma_km,
        gain=gain,
        noise_sigma=noise_sigma,
        misalign_shift_km=(shift_dx_km, shift_dy_km),
        misalign_time_hours=time_offset_hours,
    )
    lr = degrade_seq(hr, sensor, factor=factor, seed=seed)
    write_pair(out, hr, lr)
    click.echo(
        f"wrote pair to {out}: HR {hr.geometry.rows}x{hr.geometry.cols}, "
        f"LR {lr.geometry.rows}x{lr.geometry.cols}, {len(hr)} frames"
    )


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="hr/lr pair container.")
@click.option("--method", type=click.Choice(["nearest", "bilinear", "bicubic", "kriging"]),
              default="bicubic", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_baseline_options
@_io_options
@_config_option
@click.pass_context
def downscale(ctx, in_path, method, out, config_path, **kwargs):
    """Upsample a pair's LR side with a classical baseline."""
    cfg = _load_config_file(config_path)
    v = _resolve(ctx, cfg, **kwargs)
    io = _io_opts(v)
    hr, lr = read_pair(
        in_path,
        source="hdf5" if Path(in_path).suffix.lower() in (".h5", ".hdf5") else "rnb",
        hdf5_hr_name=io.hdf5_hr_name, hdf5_lr_name=io.hdf5_lr_name, sentinel=io.sentinel,
    )
    pred = predict_sequence(method, lr, hr.geometry, _baseline_params(v))
    write_sequences(out, [pred])
    click.echo(f"wrote {method} prediction ({len(pred)} frames) to {out}")


@cli.command(name="evaluate")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--obs", "obs_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Pair container (HR side is the truth) or single sequence.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Report JSON path (default: stdout).")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--field-diagnostics", is_flag=True,
              help="Include non-canonical field-derivative diagnostics.")
@_metric_options
@_config_option
@click.pass_context
def evaluate_cmd(ctx, pred_path, obs_path, out, workers, field_diagnostics, config_path, **kwargs):
    """Score a prediction container against observations."""
    cfg = _load_config_file(config_path)
    v = _resolve(ctx, cfg, **kwargs)
    io = IoOptions()
    pred_seqs = read_sequences(pred_path)
    if len(pred_seqs) != 1:
        raise LayoutMismatch(
            f"{pred_path}: prediction container must hold exactly 1 sequence, "
            f"found {len(pred_seqs)}"
        )
    pred = pred_seqs[0]
    obs = _read_obs(obs_path, io)
    report = evaluate(pred, obs, _metric_config(v), workers=workers)
    doc = report.to_dict()
    if field_diagnostics:
        doc["field_diagnostics"] = field_derivative_diagnostics(pred, obs)
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text + "\n")
        click.echo(f"wrote report to {out}")
    else:
        click.echo(text)


def _data_root_option(fn):
    return click.option(
        "--data-root", envvar="PRECIPEVAL_DATA_ROOT", required=True,
        type=click.Path(exists=True, file_okay=False),
        help="Directory of monthly YYYY-MM pair files (env: PRECIPEVAL_DATA_ROOT).",
    )(fn)


@cli.command(name="export-inputs")
@_data_root_option
@click.option("--year", type=int, required=True, help="Fold test year.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_io_options
@_config_option
@click.pass_context
def export_inputs_cmd(ctx, data_root, year, out_dir, config_path, **kwargs):
    """Write one fold's LR inputs plus the exchange manifest."""
    cfg = _load_config_file(config_path)
    v = _resolve(ctx, cfg, **kwargs)
    io = _io_opts(v)
    index = build_index(data_root, hdf5_hr_name=io.hdf5_hr_name, hdf5_lr_name=io.hdf5_lr_name)
    plan = make_folds(index)
    fold = next((f for f in plan.folds if f.test_year == year), None)
    if fold is None:
        raise click.UsageError(f"year {year} not present; have {index.years()}")
    manifest = do_export_inputs(index, fold, out_dir, io)
    click.echo(f"exported {len(manifest['sequences'])} sequences to {out_dir}")


@cli.command(name="score-external")
@_data_root_option
@click.option("--year", type=int, required=True, help="Fold test year.")
@click.option("--exchange", "exchange_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@_metric_options
@_io_options
@_config_option
@click.pass_context
def score_external_cmd(ctx, data_root, year, exchange_dir, out, workers, config_path, **kwargs):
    """Score externally produced predictions for one fold."""
    cfg = _load_config_file(config_path)
    v = _resolve(ctx, cfg, **kwargs)
    io = _io_opts(v)
    index = build_index(data_root, hdf5_hr_name=io.hdf5_hr_name, hdf5_lr_name=io.hdf5_lr_name)
    plan = make_folds(index)
    fold = next((f for f in plan.folds if f.test_year == year), None)
    if fold is None:
        raise click.UsageError(f"year {year} not present; have {index.years()}")
    report = run_external(index, fold, exchange_dir, _metric_config(v), io, workers)
    text = json.dumps(report.to_dict(), indent=2)
    if out:
        Path(out).write_text(text + "\n")
        click.echo(f"wrote report to {out}")
    else:
        click.echo(text)


@cli.command(name="crossval")
@_data_root_option
@click.option("--methods", default="nearest,bilinear,bicubic,kriging", show_default=True,
              help="Comma-separated baseline list.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--workers", type=int, default=1, show_default=True)
@_metric_options
@_baseline_options
@_io_options
@_config_option
@click.pass_context
def crossval_cmd(ctx, data_root, methods, out_dir, workers, config_path, **kwargs):
    """Leave-one-year-out cross-validation over a dataset directory."""
    cfg = _load_config_file(config_path)
    v = _resolve(ctx, cfg, **kwargs)
    io = _io_opts(v)
    method_list = [m.strip() for m in methods.split(",") if m.strip()]
    index = build_index(data_root, hdf5_hr_name=io.hdf5_hr_name, hdf5_lr_name=io.hdf5_lr_name)
    result = run_crossval(
        index, method_list, _metric_config(v), _baseline_params(v), io, workers
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    (out / "leaderboard.csv").write_text(render_leaderboard(result.rows, "csv"))
    (out / "leaderboard.md").write_text(render_leaderboard(result.rows, "markdown"))
    points = scatter_points(result.rows)
    (out / "scatter.csv").write_text(scatter_csv(points))
    (out / "scatter.svg").write_text(scatter_svg(points))
    click.echo(f"cross-validated {len(method_list)} methods over {len(result.years)} folds")
    click.echo(render_leaderboard(result.rows, "markdown"))


@cli.command(name="report")
@click.option("--results", "results_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="results.json from crossval.")
@click.option("--format", "fmt", type=click.Choice(["csv", "markdown", "json"]),
              default="markdown", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--scatter-csv", "scatter_csv_path", type=click.Path(dir_okay=False), default=None)
@click.option("--scatter-svg", "scatter_svg_path", type=click.Path(dir_okay=False), default=None)
def report_cmd(results_path, fmt, out, scatter_csv_path, scatter_svg_path):
    """Render leaderboard and scatter documents from saved results."""
    data = json.loads(Path(results_path).read_text())
    rows = []
    for method, block in data["methods"].items():
        rows.append(
            LeaderboardRow(
                method=method,
                report=MetricReport.from_dict(block["fold_equal"]),
                fold_count=len(block.get("folds", {})),
                frame_weighted=MetricReport.from_dict(block["frame_weighted"])
                if block.get("frame_weighted")
                else None,
            )
        )
    if fmt == "json":
        text = json.dumps(data, indent=2)
    else:
        text = render_leaderboard(rows, fmt)
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
        click.echo(f"wrote {fmt} report to {out}")
    else:
        click.echo(text)
    points = scatter_points(rows)
    if scatter_csv_path:
        Path(scatter_csv_path).write_text(scatter_csv(points))
        click.echo(f"wrote scatter CSV to {scatter_csv_path}")
    if scatter_svg_path:
        Path(scatter_svg_path).write_text(scatter_svg(points))
        click.echo(f"wrote scatter SVG to {scatter_svg_path}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 130
    except click.ClickException as exc:
        exc.show()
        return _EXIT_VALIDATION if exc.exit_code in (1, 2) else exc.exit_code
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        return _EXIT_VALIDATION
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return _EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return _EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
