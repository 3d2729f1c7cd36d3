"""Cross-validation runner, external-model exchange, and report emitters.

Folds are leave-one-year-out over the monthly files of a dataset index.
Within a fold every month is scored as its own sequence (cluster-motion
metrics need temporal continuity, which breaks at month boundaries) and
the per-month reports are combined frame-count-weighted: plain means
combine linearly, RMS-style metrics (rmse, hrts) combine in quadrature,
and the pooled top-quantile metric combines as a weighted mean of
per-month values, which is an approximation and documented as such.

Across folds the default aggregation is fold-equal means of the
sub-metrics with PEM/PDEM recomputed from those means; a frame-weighted
variant is carried alongside in every emitted document.

The classical baselines need no training, so a fold's training years
only matter for external models; the exchange protocol hands them the
fold's LR inputs as rnb files plus a JSON manifest and expects one
prediction container per sequence id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import baselines
from .errors import (
    CorruptFile,
    EmptyInput,
    GeometryMismatch,
    InvalidConfig,
    IoFailure,
    LayoutMismatch,
    MissingPrediction,
    TooFewYears,
)
from .grid import GridGeometry, PrecipFrame, PrecipSequence
from .io_container import (
    DatasetIndex,
    IndexEntry,
    read_pair,
    read_sequences,
    source_for_path,
    write_sequences,
)
from .metrics import (
    AmoTable,
    MetricConfig,
    MetricReport,
    evaluate,
    report_from_sub_metrics,
)

EXCHANGE_PROTOCOL = "precipeval-exchange-1"
BASELINE_METHODS = ("nearest", "bilinear", "bicubic", "kriging")


@dataclass(frozen=True)
class Fold:
    test_year: int
    train_years: tuple[int, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]
    policy: str = "leave-one-year-out"


def make_folds(index: DatasetIndex) -> FoldPlan:
    """One fold per year, ascending; each year is the test set once."""
    years = index.years()
    if len(years) < 2:
        raise TooFewYears(f"cross-validation needs >= 2 years, found {len(years)}")
    folds = tuple(
        Fold(test_year=y, train_years=tuple(t for t in years if t != y)) for y in years
    )
    return FoldPlan(folds=folds)


@dataclass(frozen=True)
class BaselineParams:
    """Knobs for the classical downscalers."""

    kernel_a: float = -0.5
    neighborhood_k: int = 16
    variogram: str = "exponential"
    seed: int = 0


@dataclass(frozen=True)
class IoOptions:
    hdf5_hr_name: str = "hr"
    hdf5_lr_name: str = "lr"
    sentinel: Optional[float] = None


def _read_entry(entry: IndexEntry, io_options: IoOptions):
    return read_pair(
        entry.path,
        source=source_for_path(entry.path),
        hdf5_hr_name=io_options.hdf5_hr_name,
        hdf5_lr_name=io_options.hdf5_lr_name,
        sentinel=io_options.sentinel,
    )


def _quantize32(frame: PrecipFrame) -> PrecipFrame:
    """Round prediction values to float32, exactly matching what survives
    a round-trip through the exchange container."""
    arr = np.ascontiguousarray(frame.values, dtype=np.float32)
    arr.flags.writeable = False
    return PrecipFrame(frame.geometry, arr, frame.timestamp)


def _upsample_factor(lr: GridGeometry, hr: GridGeometry) -> int:
    factor = hr.rows // lr.rows
    if factor < 1 or hr.rows != lr.rows * factor or hr.cols != lr.cols * factor:
        raise GeometryMismatch(
            f"HR {hr.rows}x{hr.cols} is not an integer multiple of LR {lr.rows}x{lr.cols}"
        )
    return factor


def predict_sequence(
    method: str,
    lr: PrecipSequence,
    hr_geometry: GridGeometry,
    params: BaselineParams = BaselineParams(),
) -> PrecipSequence:
    """Apply a baseline to every LR frame; output is float32 so in-memory
    scoring and file-exchange scoring see bit-identical predictions."""
    if method not in BASELINE_METHODS:
        raise InvalidConfig(f"unknown baseline {method!r}; pick from {BASELINE_METHODS}")
    factor = _upsample_factor(lr.geometry, hr_geometry)

    def one(frame: PrecipFrame) -> PrecipFrame:
        if method == "nearest":
            out = baselines.upsample_nearest(frame, factor)
        elif method == "bilinear":
            out = baselines.upsample_bilinear(frame, factor)
        elif method == "bicubic":
            out = baselines.upsample_bicubic(frame, factor, kernel_a=params.kernel_a)
        else:
            out = baselines.kriging_downscale(
                frame,
                factor,
                kind=params.variogram,
                neighborhood_k=params.neighborhood_k,
                seed=params.seed,
            )
        return _quantize32(out)

    return lr.map_frames(one)


# -- report combination ------------------------------------------------------

_LINEAR_METRICS = ("mppe", "hrre", "ammd", "cpmse", "cmd")
_QUADRATIC_METRICS = ("hrts", "rmse")


def combine_reports(
    reports: Sequence[MetricReport], amo: AmoTable = AmoTable()
) -> MetricReport:
    """Frame-count-weighted combination of per-sequence reports.

    Weights are each metric's own frames_used counts; hrts and rmse are
    combined in quadrature since they are RMS quantities.
    """
    if not reports:
        raise EmptyInput("no reports to combine")

    sub: dict[str, float] = {}
    frames_used: dict[str, int] = {}
    for name in _LINEAR_METRICS + _QUADRATIC_METRICS:
        weights = [getattr(r, f"frames_used_{name}") for r in reports]
        values = [getattr(r, name) for r in reports]
        total = sum(weights)
        frames_used[name] = total
        if total == 0:
            sub[name] = 0.0
        elif name in _QUADRATIC_METRICS:
            sub[name] = math.sqrt(math.fsum(w * v * v for w, v in zip(weights, values)) / total)
        else:
            sub[name] = math.fsum(w * v for w, v in zip(weights, values)) / total
    rmse_value = sub.pop("rmse")
    rmse_frames = frames_used.pop("rmse")
    frames_used["rmse"] = rmse_frames
    return report_from_sub_metrics(sub, rmse_value, frames_used, amo)


def fold_equal_mean(reports: Sequence[MetricReport], amo: AmoTable = AmoTable()) -> MetricReport:
    """Plain mean of sub-metrics over folds, PEM/PDEM recomputed from the
    means (the default cross-fold aggregation)."""
    if not reports:
        raise EmptyInput("no reports to combine")
    n = len(reports)
    sub = {
        name: math.fsum(getattr(r, name) for r in reports) / n
        for name in ("mppe", "hrre", "ammd", "cpmse", "hrts", "cmd")
    }
    rmse_value = math.fsum(r.rmse for r in reports) / n
    frames_used = {
        name: sum(getattr(r, f"frames_used_{name}") for r in reports)
        for name in ("mppe", "hrre", "ammd", "cpmse", "hrts", "cmd", "rmse")
    }
    return report_from_sub_metrics(sub, rmse_value, frames_used, amo)


# -- fold scoring --------------------------------------------------------


def run_baseline(
    index: DatasetIndex,
    fold: Fold,
    method: str,
    metric_config: MetricConfig = MetricConfig(),
    params: BaselineParams = BaselineParams(),
    io_options: IoOptions = IoOptions(),
    workers: int = 1,
) -> MetricReport:
    """Score one baseline over a fold's test year."""
    entries = index.for_year(fold.test_year)
    if not entries:
        raise EmptyInput(f"no data for test year {fold.test_year}")
    reports = []
    for entry in entries:
        hr, lr = _read_entry(entry, io_options)
        pred = predict_sequence(method, lr, hr.geometry, params)
        reports.append(evaluate(pred, hr, metric_config, workers=workers))
    return combine_reports(reports, metric_config.amo)


def sequence_id(entry: IndexEntry) -> str:
    return f"{entry.year}-{entry.month:02d}"


def export_inputs(
    index: DatasetIndex,
    fold: Fold,
    exchange_dir,
    io_options: IoOptions = IoOptions(),
) -> dict:
    """Write the fold's LR inputs and a manifest for an external model.

    The model must leave one rnb container per sequence id at the
    manifest's ``prediction`` path, holding a single HR-geometry sequence.
    """
    entries = index.for_year(fold.test_year)
    if not entries:
        raise EmptyInput(f"no data for test year {fold.test_year}")
    root = Path(exchange_dir)
    (root / "inputs").mkdir(parents=True, exist_ok=True)
    (root / "predictions").mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "protocol": EXCHANGE_PROTOCOL,
        "test_year": fold.test_year,
        "train_years": list(fold.train_years),
        "sequences": [],
    }
    for entry in entries:
        hr, lr = _read_entry(entry, io_options)
        sid = sequence_id(entry)
        input_rel = f"inputs/{sid}.lr.rnb"
        write_sequences(root / input_rel, [lr])
        manifest["sequences"].append(
            {
                "id": sid,
                "frames": len(lr),
                "hr_rows": hr.geometry.rows,
                "hr_cols": hr.geometry.cols,
                "hr_pixel_size_km": hr.geometry.pixel_size_km,
                "lr_rows": lr.geometry.rows,
                "lr_cols": lr.geometry.cols,
                "input": input_rel,
                "prediction": f"predictions/{sid}.pred.rnb",
            }
        )
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def run_external(
    index: DatasetIndex,
    fold: Fold,
    exchange_dir,
    metric_config: MetricConfig = MetricConfig(),
    io_options: IoOptions = IoOptions(),
    workers: int = 1,
) -> MetricReport:
    """Score externally produced predictions exactly like a baseline."""
    root = Path(exchange_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise IoFailure(f"no manifest.json under {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{manifest_path}: {exc}") from exc
    if manifest.get("protocol") != EXCHANGE_PROTOCOL:
        raise LayoutMismatch(
            f"{manifest_path}: protocol {manifest.get('protocol')!r} != {EXCHANGE_PROTOCOL!r}"
        )
    by_id = {sequence_id(e): e for e in index.for_year(manifest["test_year"])}
    reports = []
    for item in manifest["sequences"]:
        sid = item["id"]
        entry = by_id.get(sid)
        if entry is None:
            raise LayoutMismatch(f"manifest sequence {sid!r} not present in the index")
        pred_path = root / item["prediction"]
        if not pred_path.is_file():
            raise MissingPrediction(sid)
        seqs = read_sequences(pred_path)
        if len(seqs) != 1:
            raise LayoutMismatch(f"{pred_path}: expected 1 sequence, found {len(seqs)}")
        pred = seqs[0]
        hr, _lr = _read_entry(entry, io_options)
        if pred.geometry != hr.geometry:
            raise GeometryMismatch(
                f"{pred_path}: prediction geometry {pred.geometry} != HR {hr.geometry}"
            )
        if len(pred) != len(hr):
            raise GeometryMismatch(
                f"{pred_path}: {len(pred)} frames, expected {len(hr)}"
            )
        reports.append(evaluate(pred, hr, metric_config, workers=workers))
    return combine_reports(reports, metric_config.amo)


# -- leaderboard ---------------------------------------------------------


@dataclass(frozen=True)
class LeaderboardRow:
    """Aggregated scores for one method."""

    method: str
    report: MetricReport
    fold_count: int = 1
    frame_weighted: Optional[MetricReport] = field(default=None, compare=False)

    @classmethod
    def from_sub_metrics(
        cls,
        method: str,
        sub: Mapping[str, float],
        rmse_x100: float,
        amo: AmoTable = AmoTable(),
        fold_count: int = 1,
    ) -> "LeaderboardRow":
        frames = {k: 0 for k in ("mppe", "hrre", "ammd", "cpmse", "hrts", "cmd", "rmse")}
        report = report_from_sub_metrics(dict(sub), rmse_x100 / 100.0, frames, amo)
        return cls(method=method, report=report, fold_count=fold_count)


LEADERBOARD_COLUMNS = (
    "Approach",
    "MPPE",
    "HRRE",
    "AMMD",
    "CPMSE",
    "HRTS",
    "CMD",
    "PEM",
    "PDEM",
    "RMSE×100",
)
_COLUMN_FIELDS = ("mppe", "hrre", "ammd", "cpmse", "hrts", "cmd", "pem", "pdem", "rmse_x100")


def _rank_flags(values: list[float]) -> list[str]:
    """'*' for the best (lowest) value, '^' for the second best."""
    order = sorted(set(values))
    best = order[0]
    second = order[1] if len(order) > 1 else None
    flags = []
    for v in values:
        if v == best:
            flags.append("*")
        elif second is not None and v == second:
            flags.append("^")
        else:
            flags.append("")
    return flags


def leaderboard(rows: Sequence[LeaderboardRow], format: str = "markdown") -> str:
    """Render the ranking table; lower is better in every column.

    Best cells are flagged '*' (bold in markdown), second-best '^'
    (italic). Three decimals everywhere.
    """
    if not rows:
        raise EmptyInput("leaderboard needs at least one row")
    if format not in ("csv", "markdown"):
        raise InvalidConfig(f"unknown leaderboard format {format!r}")
    table = {f: [getattr(r.report, f) for r in rows] for f in _COLUMN_FIELDS}
    flags = {f: _rank_flags(table[f]) for f in _COLUMN_FIELDS}

    lines = []
    if format == "csv":
        lines.append(",".join(LEADERBOARD_COLUMNS))
        for i, row in enumerate(rows):
            cells = [row.method]
            cells += [f"{table[f][i]:.3f}{flags[f][i]}" for f in _COLUMN_FIELDS]
            lines.append(",".join(cells))
    else:
        lines.append("| " + " | ".join(LEADERBOARD_COLUMNS) + " |")
        lines.append("|" + "|".join(["---"] * len(LEADERBOARD_COLUMNS)) + "|")
        for i, row in enumerate(rows):
            cells = [row.method]
            for f in _COLUMN_FIELDS:
                text = f"{table[f][i]:.3f}"
                if flags[f][i] == "*":
                    text = f"**{text}**"
                elif flags[f][i] == "^":
                    text = f"_{text}_"
                cells.append(text)
            lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def scatter_points(rows: Sequence[LeaderboardRow]) -> list[tuple[float, float, str]]:
    """(pdem, pem, label) per method, for the dynamics-vs-reconstruction
    scatter."""
    if not rows:
        raise EmptyInput("scatter needs at least one row")
    return [(r.report.pdem, r.report.pem, r.method) for r in rows]


def scatter_csv(points: Sequence[tuple[float, float, str]]) -> str:
    lines = ["pdem,pem,label"]
    lines += [f"{p:.6f},{q:.6f},{label}" for p, q, label in points]
    return "\n".join(lines) + "\n"


def scatter_svg(points: Sequence[tuple[float, float, str]], size: tuple[int, int] = (640, 480)) -> str:
    """Static SVG scatter of PEM (y) against PDEM (x)."""
    if not points:
        raise EmptyInput("scatter needs at least one point")
    w, h = size
    ml, mr, mt, mb = 60, 20, 20, 45
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo, x_hi = min(0.0, min(xs)), max(xs) * 1.1 + 1e-9
    y_lo, y_hi = min(0.0, min(ys)), max(ys) * 1.1 + 1e-9

    def sx(v):
        return ml + (v - x_lo) / (x_hi - x_lo) * (w - ml - mr)

    def sy(v):
        return h - mb - (v - y_lo) / (y_hi - y_lo) * (h - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{ml}" y1="{h - mb}" x2="{w - mr}" y2="{h - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h - mb}" stroke="black"/>',
        f'<text x="{(ml + w - mr) / 2:.1f}" y="{h - 10}" text-anchor="middle">PDEM</text>',
        f'<text x="15" y="{(mt + h - mb) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {(mt + h - mb) / 2:.1f})">PEM</text>',
    ]
    for k in range(5):
        xv = x_lo + (x_hi - x_lo) * k / 4
        yv = y_lo + (y_hi - y_lo) * k / 4
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{h - mb + 15}" text-anchor="middle">{xv:.3f}</text>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3f}</text>'
        )
    for x, y, label in points:
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" fill="#1f6fb4"/>')
        parts.append(f'<text x="{sx(x) + 6:.2f}" y="{sy(y) - 6:.2f}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- cross-validation ----------------------------------------------------


@dataclass(frozen=True)
class CrossvalResult:
    years: tuple[int, ...]
    fold_reports: Mapping[str, Mapping[int, MetricReport]]
    rows: tuple[LeaderboardRow, ...]

    def to_dict(self) -> dict:
        return {
            "years": list(self.years),
            "methods": {
                method: {
                    "folds": {str(y): r.to_dict() for y, r in by_year.items()},
                    "fold_equal": row.report.to_dict(),
                    "frame_weighted": row.frame_weighted.to_dict()
                    if row.frame_weighted
                    else None,
                }
                for method, by_year, row in (
                    (row.method, self.fold_reports[row.method], row) for row in self.rows
                )
            },
        }


def crossval(
    index: DatasetIndex,
    methods: Sequence[str],
    metric_config: MetricConfig = MetricConfig(),
    params: BaselineParams = BaselineParams(),
    io_options: IoOptions = IoOptions(),
    workers: int = 1,
) -> CrossvalResult:
    """Leave-one-year-out scores for each baseline, plus aggregate rows."""
    if not methods:
        raise EmptyInput("no methods requested")
    plan = make_folds(index)
    fold_reports: dict[str, dict[int, MetricReport]] = {}
    rows = []
    for method in methods:
        by_year: dict[int, MetricReport] = {}
        for fold in plan.folds:
            by_year[fold.test_year] = run_baseline(
                index, fold, method, metric_config, params, io_options, workers
            )
        fold_reports[method] = by_year
        reports = [by_year[y] for y in sorted(by_year)]
        rows.append(
            LeaderboardRow(
                method=method,
                report=fold_equal_mean(reports, metric_config.amo),
                fold_count=len(reports),
                frame_weighted=combine_reports(reports, metric_config.amo),
            )
        )
    return CrossvalResult(
        years=tuple(index.years()),
        fold_reports=fold_reports,
        rows=tuple(rows),
    )
