import json
import math

import numpy as np
import pytest

from precipeval import build_index, read_pair, write_pair, write_sequences
from precipeval.errors import (
    EmptyInput,
    GeometryMismatch,
    InvalidConfig,
    MissingPrediction,
    TooFewYears,
)
from precipeval.harness import (
    LeaderboardRow,
    combine_reports,
    crossval,
    export_inputs,
    fold_equal_mean,
    leaderboard,
    make_folds,
    predict_sequence,
    run_baseline,
    run_external,
    scatter_csv,
    scatter_points,
    scatter_svg,
)
from precipeval.metrics import evaluate

from conftest import build_corpus, make_sequence
from reference_rows import REFERENCE_ROWS, row_sub_metrics


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return build_corpus(root, years=(2001, 2002, 2003), months=(7, 8), n_frames=8)


@pytest.fixture(scope="module")
def index(corpus):
    return build_index(corpus)


def test_make_folds(index):
    plan = make_folds(index)
    assert plan.policy == "leave-one-year-out"
    assert [f.test_year for f in plan.folds] == [2001, 2002, 2003]
    assert plan.folds[0].train_years == (2002, 2003)
    years = sorted(f.test_year for f in plan.folds)
    assert years == index.years()  # partition: each year tested exactly once


def test_make_folds_17_years(tmp_path):
    hr = make_sequence(np.zeros((1, 6, 6), dtype=np.float32))
    lr = make_sequence(np.zeros((1, 2, 2), dtype=np.float32), pixel_size_km=12.0)
    root = tmp_path / "full"
    root.mkdir()
    for year in range(2002, 2019):
        write_pair(root / f"{year}-07.rnb", hr, lr)
    plan = make_folds(build_index(root))
    assert len(plan.folds) == 17
    assert plan.folds[0].test_year == 2002
    assert len(plan.folds[0].train_years) == 16


def test_make_folds_too_few(tmp_path):
    root = build_corpus(tmp_path / "one", years=(2001,), months=(7, 8), n_frames=3)
    with pytest.raises(TooFewYears):
        make_folds(build_index(root))


def test_identity_oracle_run(index):
    # scoring HR against itself through the external path: all zeros
    fold = make_folds(index).folds[0]
    entry = index.for_year(fold.test_year)[0]
    hr, _ = read_pair(entry.path)
    report = evaluate(hr, hr)
    assert report.pem == 0.0 and report.pdem == 0.0 and report.rmse == 0.0


def test_run_baseline_ordering(index):
    fold = make_folds(index).folds[0]
    near = run_baseline(index, fold, "nearest")
    bic = run_baseline(index, fold, "bicubic")
    assert bic.rmse <= near.rmse
    assert near.frames_used_rmse == 16  # two months of 8 frames


def test_run_baseline_kriging_constant_fold(tmp_path):
    root = tmp_path / "const"
    root.mkdir()
    hr = make_sequence(np.full((4, 12, 12), 2.5, dtype=np.float32))
    lr = make_sequence(np.full((4, 4, 4), 2.5, dtype=np.float32), pixel_size_km=12.0)
    for year in (2001, 2002):
        write_pair(root / f"{year}-07.rnb", hr, lr)
    idx = build_index(root)
    fold = make_folds(idx).folds[0]
    report = run_baseline(idx, fold, "kriging")
    assert report.rmse == 0.0


def test_unknown_method(index):
    fold = make_folds(index).folds[0]
    with pytest.raises(InvalidConfig):
        run_baseline(index, fold, "esrgan")


def test_external_path_equivalence(index, tmp_path):
    fold = make_folds(index).folds[1]
    exchange = tmp_path / "exchange"
    manifest = export_inputs(index, fold, exchange)
    assert (exchange / "manifest.json").is_file()
    by_id = {f"{e.year}-{e.month:02d}": e for e in index.for_year(fold.test_year)}
    for item in manifest["sequences"]:
        hr, lr = read_pair(by_id[item["id"]].path)
        pred = predict_sequence("bicubic", lr, hr.geometry)
        write_sequences(exchange / item["prediction"], [pred])
    external = run_external(index, fold, exchange)
    internal = run_baseline(index, fold, "bicubic")
    assert external == internal  # bit-for-bit


def test_external_ground_truth_scores_zero(index, tmp_path):
    fold = make_folds(index).folds[2]
    exchange = tmp_path / "truth"
    manifest = export_inputs(index, fold, exchange)
    by_id = {f"{e.year}-{e.month:02d}": e for e in index.for_year(fold.test_year)}
    for item in manifest["sequences"]:
        hr, _lr = read_pair(by_id[item["id"]].path)
        write_sequences(exchange / item["prediction"], [hr])
    report = run_external(index, fold, exchange)
    assert report.pem == 0.0 and report.pdem == 0.0 and report.rmse == 0.0
    assert report.mppe == 0.0 and report.cmd == 0.0


def test_external_missing_prediction(index, tmp_path):
    fold = make_folds(index).folds[0]
    exchange = tmp_path / "partial"
    manifest = export_inputs(index, fold, exchange)
    by_id = {f"{e.year}-{e.month:02d}": e for e in index.for_year(fold.test_year)}
    first = manifest["sequences"][0]
    hr, lr = read_pair(by_id[first["id"]].path)
    write_sequences(exchange / first["prediction"], [predict_sequence("nearest", lr, hr.geometry)])
    with pytest.raises(MissingPrediction) as err:
        run_external(index, fold, exchange)
    assert manifest["sequences"][1]["id"] in str(err.value)


def test_external_geometry_validation(index, tmp_path):
    fold = make_folds(index).folds[0]
    exchange = tmp_path / "badgeom"
    manifest = export_inputs(index, fold, exchange)
    wrong = make_sequence(np.zeros((8, 12, 12), dtype=np.float32))
    for item in manifest["sequences"]:
        write_sequences(exchange / item["prediction"], [wrong])
    with pytest.raises(GeometryMismatch):
        run_external(index, fold, exchange)


def test_combine_reports_weighted():
    from precipeval.metrics import report_from_sub_metrics

    r1 = report_from_sub_metrics(
        {"mppe": 2.0, "hrre": 10.0, "ammd": 0.1, "cpmse": 1.0, "hrts": 3.0, "cmd": 5.0},
        1.0,
        {"mppe": 10, "hrre": 10, "ammd": 5, "cpmse": 10, "hrts": 4, "cmd": 5, "rmse": 10},
    )
    r2 = report_from_sub_metrics(
        {"mppe": 4.0, "hrre": 20.0, "ammd": 0.3, "cpmse": 3.0, "hrts": 5.0, "cmd": 15.0},
        2.0,
        {"mppe": 30, "hrre": 30, "ammd": 15, "cpmse": 30, "hrts": 12, "cmd": 15, "rmse": 30},
    )
    combined = combine_reports([r1, r2])
    assert combined.mppe == pytest.approx((2 * 10 + 4 * 30) / 40)
    assert combined.cmd == pytest.approx((5 * 5 + 15 * 15) / 20)
    assert combined.rmse == pytest.approx(math.sqrt((1 * 10 + 4 * 30) / 40))
    assert combined.hrts == pytest.approx(math.sqrt((9 * 4 + 25 * 12) / 16))
    assert combined.frames_used_rmse == 40
    with pytest.raises(EmptyInput):
        combine_reports([])


def test_fold_equal_mean_matches_hand_average():
    from precipeval.metrics import report_from_sub_metrics

    frames = {k: 4 for k in ("mppe", "hrre", "ammd", "cpmse", "hrts", "cmd", "rmse")}
    r1 = report_from_sub_metrics(
        {"mppe": 2.0, "hrre": 10.0, "ammd": 0.1, "cpmse": 1.0, "hrts": 3.0, "cmd": 5.0}, 1.0, frames
    )
    r2 = report_from_sub_metrics(
        {"mppe": 6.0, "hrre": 30.0, "ammd": 0.3, "cpmse": 5.0, "hrts": 7.0, "cmd": 9.0}, 3.0, frames
    )
    mean = fold_equal_mean([r1, r2])
    assert mean.mppe == 4.0 and mean.cmd == 7.0 and mean.rmse == 2.0
    from precipeval.metrics import pem

    assert mean.pem == pytest.approx(
        pem({"mppe": 4.0, "hrre": 20.0, "ammd": 0.2, "cpmse": 3.0})
    )


# -- leaderboard / scatter -----------------------------------------------


def _reference_leaderboard_rows():
    return [
        LeaderboardRow.from_sub_metrics(name, row_sub_metrics(row), rmse_x100=row[9])
        for name, row in ((r[0], r) for r in REFERENCE_ROWS)
    ]


def test_leaderboard_reproduces_reference_aggregates():
    rows = _reference_leaderboard_rows()
    for row, ref in zip(rows, REFERENCE_ROWS):
        assert row.report.pem == pytest.approx(ref[7], abs=0.002)
        assert row.report.pdem == pytest.approx(ref[8], abs=0.002)


def test_leaderboard_formats():
    rows = _reference_leaderboard_rows()
    csv = leaderboard(rows, "csv")
    lines = csv.strip().split("\n")
    assert lines[0] == "Approach,MPPE,HRRE,AMMD,CPMSE,HRTS,CMD,PEM,PDEM,RMSE×100"
    assert len(lines) == 15
    # best MPPE is edvr (2.148), flagged with '*'
    edvr_line = next(l for l in lines if l.startswith("edvr,"))
    assert "2.148*" in edvr_line
    md = leaderboard(rows, "markdown")
    assert "| Approach |" in md
    assert "**2.148**" in md
    idn_line = next(l for l in md.strip().split("\n") if l.startswith("| idn"))
    assert "**0.441**" in idn_line  # best PDEM
    assert "**0.312**" in idn_line  # best RMSEx100


def test_leaderboard_single_row_all_best():
    row = _reference_leaderboard_rows()[0]
    csv = leaderboard([row], "csv")
    cells = csv.strip().split("\n")[1].split(",")
    assert all(cell.endswith("*") for cell in cells[1:])


def test_leaderboard_two_rows_min_flagged():
    rows = _reference_leaderboard_rows()[:2]  # kriging vs bicubic
    csv = leaderboard(rows, "csv").strip().split("\n")
    kriging, bicubic = csv[1].split(","), csv[2].split(",")
    assert kriging[1] == "4.036*" and bicubic[1] == "4.600^"  # MPPE: kriging best
    assert kriging[9] == "0.372^" and bicubic[9] == "0.345*"  # RMSE: bicubic best
    with pytest.raises(EmptyInput):
        leaderboard([], "csv")


def test_scatter_points_reference_values():
    rows = _reference_leaderboard_rows()
    points = scatter_points(rows)
    by_label = {label: (x, y) for x, y, label in points}
    assert by_label["kriging"][0] == pytest.approx(0.568, abs=0.002)
    assert by_label["kriging"][1] == pytest.approx(0.259, abs=0.002)
    assert by_label["edvr"][0] == pytest.approx(0.476, abs=0.002)
    assert by_label["edvr"][1] == pytest.approx(0.180, abs=0.002)
    with pytest.raises(EmptyInput):
        scatter_points([])


def test_scatter_documents():
    rows = _reference_leaderboard_rows()[:3]
    points = scatter_points(rows)
    csv = scatter_csv(points)
    assert csv.startswith("pdem,pem,label\n")
    assert len(csv.strip().split("\n")) == 4
    svg = scatter_svg(points)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<circle") == 3
    assert "PDEM" in svg and "PEM" in svg


# -- crossval ---------------------------------------------------------------


def test_crossval_deterministic(index):
    a = crossval(index, ["nearest", "bicubic"], workers=1)
    b = crossval(index, ["nearest", "bicubic"], workers=3)
    assert a.to_dict() == b.to_dict()
    assert a.rows[0].fold_count == 3
    assert set(a.fold_reports["nearest"]) == {2001, 2002, 2003}


def test_crossval_rows_round_trip(index, tmp_path):
    result = crossval(index, ["nearest"], workers=2)
    doc = json.dumps(result.to_dict())
    parsed = json.loads(doc)
    assert parsed["years"] == [2001, 2002, 2003]
    block = parsed["methods"]["nearest"]
    assert set(block["folds"]) == {"2001", "2002", "2003"}
    assert block["fold_equal"]["frames_used_rmse"] == 48
    assert block["frame_weighted"]["rmse"] > 0
