"""Verification metric suite for prediction/observation sequence pairs.

Six sub-metrics, their percent-bias normalization against annual-mean
observation constants, the two weighted aggregates, and plain RMSE:

- ``mppe`` (mm/hour): difference of the top quantile of all rain rates,
  pooled over space and time.
- ``hrre`` (km^2): mean per-frame difference of heavy-rain coverage.
- ``cpmse`` (mm^2/hour^2): mean squared per-pixel difference of temporal
  mean rain rate.
- ``ammd`` (radian): mean wrapped orientation difference of the main
  rainfall systems.
- ``cmd`` (km): mean distance between main-system centroids.
- ``hrts`` (km/hour): RMSE of main-system speeds over consecutive frames.
- ``rmse`` (mm/hour): pooled over all pixels and frames.

``pem = 0.25 * sum(pbias of mppe, hrre, ammd, cpmse)`` measures
reconstruction error; ``pdem = 0.5 * sum(pbias of hrts, cmd)`` measures
dynamics error, with ``pbias = |metric| / amo``.

Frames where either side lacks a main cluster are skipped for
ammd/cmd/hrts and the per-metric ``frames_used`` counts say how many
frames (or steps, for hrts) actually contributed.

Everything here is pure and deterministic: accumulation runs in float64
with exact summation (``math.fsum``), per-frame work is split into
fixed-size blocks so results are bit-identical for any worker count.
"""

from __future__ import annotations

import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .cluster import ClusterConfig, ClusterStats, main_cluster
from .errors import (
    EmptyInput,
    InvalidConfig,
    MissingSubMetric,
    NonPositiveAmo,
    TooShort,
)
from .grid import PrecipFrame, PrecipSequence, check_aligned

#: Frames per work block. Fixed (never derived from the worker count) so
#: reductions happen in the same order no matter how many threads run.
BLOCK_FRAMES = 24


@dataclass(frozen=True)
class AmoTable:
    """Annual-mean observation constants used for PBIAS normalization."""

    mppe: float = 64.0
    hrre: float = 533.0
    ammd: float = 0.64
    cpmse: float = 332.0
    hrts: float = 15.0
    cmd: float = 26.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise NonPositiveAmo(f"AMO entry {f.name} must be > 0")


@dataclass(frozen=True)
class MetricConfig:
    quantile_tau: float = 0.999
    heavy_threshold: float = 10.0
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    amo: AmoTable = field(default_factory=AmoTable)

    def __post_init__(self):
        if not 0.0 < self.quantile_tau < 1.0:
            raise InvalidConfig(f"quantile_tau must be in (0, 1), got {self.quantile_tau}")
        if not self.heavy_threshold > 0:
            raise InvalidConfig(f"heavy_threshold must be > 0, got {self.heavy_threshold}")


_REPORT_FIELDS = (
    "mppe",
    "hrre",
    "ammd",
    "cpmse",
    "hrts",
    "cmd",
    "rmse",
    "rmse_x100",
    "pbias_mppe",
    "pbias_hrre",
    "pbias_ammd",
    "pbias_cpmse",
    "pbias_hrts",
    "pbias_cmd",
    "pem",
    "pdem",
    "frames_used_mppe",
    "frames_used_hrre",
    "frames_used_ammd",
    "frames_used_cpmse",
    "frames_used_hrts",
    "frames_used_cmd",
    "frames_used_rmse",
)


@dataclass(frozen=True)
class MetricReport:
    """All sub-metrics plus PBIAS/PEM/PDEM for one pred/obs pair."""

    mppe: float
    hrre: float
    ammd: float
    cpmse: float
    hrts: float
    cmd: float
    rmse: float
    rmse_x100: float
    pbias_mppe: float
    pbias_hrre: float
    pbias_ammd: float
    pbias_cpmse: float
    pbias_hrts: float
    pbias_cmd: float
    pem: float
    pdem: float
    frames_used_mppe: int
    frames_used_hrre: int
    frames_used_ammd: int
    frames_used_cpmse: int
    frames_used_hrts: int
    frames_used_cmd: int
    frames_used_rmse: int

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in _REPORT_FIELDS}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        missing = [name for name in _REPORT_FIELDS if name not in d]
        if missing:
            raise MissingSubMetric(f"report is missing fields: {missing}")
        return cls(**{name: d[name] for name in _REPORT_FIELDS})

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls.from_dict(json.loads(text))


def report_from_sub_metrics(
    sub: Mapping[str, float],
    rmse_value: float,
    frames_used: Mapping[str, int],
    amo: AmoTable = AmoTable(),
) -> MetricReport:
    """Assemble a full report from raw sub-metric values."""
    pb = {name: pbias(sub[name], getattr(amo, name)) for name in ("mppe", "hrre", "ammd", "cpmse", "hrts", "cmd")}
    return MetricReport(
        mppe=sub["mppe"],
        hrre=sub["hrre"],
        ammd=sub["ammd"],
        cpmse=sub["cpmse"],
        hrts=sub["hrts"],
        cmd=sub["cmd"],
        rmse=rmse_value,
        rmse_x100=100.0 * rmse_value,
        pbias_mppe=pb["mppe"],
        pbias_hrre=pb["hrre"],
        pbias_ammd=pb["ammd"],
        pbias_cpmse=pb["cpmse"],
        pbias_hrts=pb["hrts"],
        pbias_cmd=pb["cmd"],
        pem=pem(sub, amo),
        pdem=pdem(sub, amo),
        frames_used_mppe=frames_used["mppe"],
        frames_used_hrre=frames_used["hrre"],
        frames_used_ammd=frames_used["ammd"],
        frames_used_cpmse=frames_used["cpmse"],
        frames_used_hrts=frames_used["hrts"],
        frames_used_cmd=frames_used["cmd"],
        frames_used_rmse=frames_used["rmse"],
    )


# -- quantiles ---------------------------------------------------------------


def _nearest_rank(tau: float, n: int) -> int:
    """1-based nearest-rank index: ceil(tau * n), with a 1e-12 relative
    slack so decimal taus (0.9 * 1000 -> 900) land where intended."""
    k = math.ceil(tau * n * (1.0 - 1e-12))
    return min(max(k, 1), n)


def quantile(values, tau: float) -> float:
    """Nearest-rank quantile of a multiset: sorted ascending, entry
    ceil(tau * N) (1-based)."""
    if not 0.0 < tau < 1.0:
        raise InvalidConfig(f"tau must be in (0, 1), got {tau}")
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyInput("quantile of an empty multiset")
    k = _nearest_rank(tau, arr.size)
    return float(np.partition(arr, k - 1)[k - 1])


def _pooled_nearest_rank(frames: Sequence[np.ndarray], tau: float, map_fn=map) -> float:
    """Exact nearest-rank quantile pooled over many arrays without
    concatenating them.

    Non-negative finite IEEE floats sort identically to their unsigned bit
    patterns, so this does a 16-bits-at-a-time radix count over the pooled
    data. Counting passes parallelize over the arrays into per-thread
    histograms; integer counts merge exactly in any order, so the result
    does not depend on scheduling.
    """
    total = sum(a.size for a in frames)
    if total == 0:
        raise EmptyInput("quantile of an empty multiset")
    rank = _nearest_rank(tau, total)

    if all(a.dtype == np.float32 for a in frames):
        views = [a.ravel().view(np.uint32) for a in frames]
        nbits, utype, ftype = 32, np.uint32, np.float32
    else:
        views = [np.ascontiguousarray(a, dtype=np.float64).ravel().view(np.uint64) for a in frames]
        nbits, utype, ftype = 64, np.uint64, np.float64

    prefix = 0
    for shift in range(nbits - 16, -1, -16):
        tls = threading.local()
        partials: list[np.ndarray] = []
        partials_lock = threading.Lock()

        def count_chunk(v, _shift=shift, _prefix=prefix, _tls=tls, _partials=partials):
            buf = getattr(_tls, "counts", None)
            if buf is None:
                buf = np.zeros(65536, dtype=np.int64)
                with partials_lock:
                    _partials.append(buf)
                _tls.counts = buf
            kernels.radix_count(v, _shift, _prefix, buf)

        for _ in map_fn(count_chunk, views):
            pass
        counts = partials[0]
        for extra in partials[1:]:
            counts += extra
        cum = np.cumsum(counts)
        b = int(np.searchsorted(cum, rank))
        if b > 0:
            rank -= int(cum[b - 1])
        prefix = (prefix << 16) | b
    return float(np.array([prefix], dtype=utype).view(ftype)[0])


# -- sub-metrics -------------------------------------------------------------


def mppe(pred: PrecipSequence, obs: PrecipSequence, config: MetricConfig = MetricConfig()) -> float:
    """Top-quantile difference, pooled over space and time (mm/hour)."""
    check_aligned(pred, obs)
    qp = _pooled_nearest_rank([f.values for f in pred], config.quantile_tau)
    qo = _pooled_nearest_rank([f.values for f in obs], config.quantile_tau)
    return abs(qp - qo)


def _heavy_area_km2(frame: PrecipFrame, threshold: float) -> float:
    return np.count_nonzero(frame.values >= threshold) * frame.geometry.pixel_area_km2


def hrre(pred: PrecipSequence, obs: PrecipSequence, config: MetricConfig = MetricConfig()) -> float:
    """Mean per-frame heavy-rain coverage difference (km^2)."""
    check_aligned(pred, obs)
    gaps = [
        abs(_heavy_area_km2(p, config.heavy_threshold) - _heavy_area_km2(o, config.heavy_threshold))
        for p, o in zip(pred, obs)
    ]
    return math.fsum(gaps) / len(gaps)


def cpmse(pred: PrecipSequence, obs: PrecipSequence, config: MetricConfig = MetricConfig()) -> float:
    """Mean squared difference of per-pixel temporal mean rates
    (mm^2/hour^2)."""
    check_aligned(pred, obs)
    sum_p = np.zeros((pred.geometry.rows, pred.geometry.cols), dtype=np.float64)
    sum_o = np.zeros_like(sum_p)
    for p, o in zip(pred, obs):
        sum_p += p.values
        sum_o += o.values
    d = sum_p / len(pred) - sum_o / len(obs)
    return float(np.mean(d * d))


def _wrapped_angle_diff(a: float, b: float) -> float:
    d = abs(a - b)
    return min(d, math.pi - d)


def cluster_track(seq: PrecipSequence, config: ClusterConfig) -> list[Optional[ClusterStats]]:
    """Main-cluster stats per frame (None where the frame is dry)."""
    return [main_cluster(f, config) for f in seq]


def _ammd_from_tracks(tp, to) -> tuple[float, int]:
    diffs = [
        _wrapped_angle_diff(p.orientation_rad, o.orientation_rad)
        for p, o in zip(tp, to)
        if p is not None and o is not None
    ]
    if not diffs:
        return 0.0, 0
    return math.fsum(diffs) / len(diffs), len(diffs)


def ammd(pred: PrecipSequence, obs: PrecipSequence, config: MetricConfig = MetricConfig()) -> float:
    """Mean wrapped main-system orientation difference (radian)."""
    check_aligned(pred, obs)
    value, _ = _ammd_from_tracks(
        cluster_track(pred, config.cluster), cluster_track(obs, config.cluster)
    )
    return value


def _cmd_from_tracks(tp, to) -> tuple[float, int]:
    dists = [
        math.hypot(p.centroid_km[0] - o.centroid_km[0], p.centroid_km[1] - o.centroid_km[1])
        for p, o in zip(tp, to)
        if p is not None and o is not None
    ]
    if not dists:
        return 0.0, 0
    return math.fsum(dists) / len(dists), len(dists)


def cmd(pred: PrecipSequence, obs: PrecipSequence, config: MetricConfig = MetricConfig()) -> float:
    """Mean distance between main-system centroids (km)."""
    check_aligned(pred, obs)
    value, _ = _cmd_from_tracks(
        cluster_track(pred, config.cluster), cluster_track(obs, config.cluster)
    )
    return value


def _speeds(track, dt: float) -> list[Optional[float]]:
    out = []
    for prev, cur in zip(track, track[1:]):
        if prev is None or cur is None:
            out.append(None)
        else:
            out.append(
                math.hypot(
                    cur.centroid_km[0] - prev.centroid_km[0],
                    cur.centroid_km[1] - prev.centroid_km[1],
                )
                / dt
            )
    return out


def _hrts_from_tracks(tp, to, dt: float) -> tuple[float, int]:
    sp = _speeds(tp, dt)
    so = _speeds(to, dt)
    diffs = [(a - b) ** 2 for a, b in zip(sp, so) if a is not None and b is not None]
    if not diffs:
        return 0.0, 0
    return math.sqrt(math.fsum(diffs) / len(diffs)), len(diffs)


def hrts(pred: PrecipSequence, obs: PrecipSequence, config: MetricConfig = MetricConfig()) -> float:
    """RMSE of main-system speeds over consecutive frames (km/hour)."""
    check_aligned(pred, obs)
    if len(pred) < 2:
        raise TooShort("hrts needs at least 2 frames")
    value, _ = _hrts_from_tracks(
        cluster_track(pred, config.cluster),
        cluster_track(obs, config.cluster),
        pred.geometry.timestep_hours,
    )
    return value


def rmse(pred: PrecipSequence, obs: PrecipSequence) -> float:
    """Root mean squared rain-rate difference, pooled over all pixels and
    frames (mm/hour)."""
    check_aligned(pred, obs)
    ssq = []
    for p, o in zip(pred, obs):
        d = np.subtract(p.values, o.values, dtype=np.float64)
        ssq.append(float(np.einsum("ij,ij->", d, d)))
    n = len(pred) * pred.geometry.n_pixels
    return math.sqrt(math.fsum(ssq) / n)


# -- aggregation -------------------------------------------------------------


def pbias(metric_value: float, amo: float) -> float:
    """Percent bias: |metric| / |AMO| (dimensionless)."""
    if not amo > 0:
        raise NonPositiveAmo(f"AMO must be > 0, got {amo}")
    return abs(metric_value) / amo


_PEM_PARTS = ("mppe", "hrre", "ammd", "cpmse")
_PDEM_PARTS = ("hrts", "cmd")


def _checked_pbias(sub: Mapping[str, float], names, amo: AmoTable) -> list[float]:
    out = []
    for name in names:
        v = sub.get(name)
        if v is None or not math.isfinite(v):
            raise MissingSubMetric(f"sub-metric {name!r} missing or non-finite")
        out.append(pbias(v, getattr(amo, name)))
    return out


def pem(sub_metrics: Mapping[str, float], amo: AmoTable = AmoTable()) -> float:
    """Reconstruction-error aggregate: 0.25 * sum of PBIAS over
    {mppe, hrre, ammd, cpmse}."""
    return 0.25 * math.fsum(_checked_pbias(sub_metrics, _PEM_PARTS, amo))


def pdem(sub_metrics: Mapping[str, float], amo: AmoTable = AmoTable()) -> float:
    """Dynamics-error aggregate: 0.5 * sum of PBIAS over {hrts, cmd}."""
    return 0.5 * math.fsum(_checked_pbias(sub_metrics, _PDEM_PARTS, amo))


# -- full evaluation ---------------------------------------------------------


@dataclass
class _BlockResult:
    heavy_pred: list
    heavy_obs: list
    track_pred: list
    track_obs: list
    ssq: list
    sum_pred: np.ndarray
    sum_obs: np.ndarray


_TLS = threading.local()


def _frame_scratch(shape) -> dict:
    """Per-thread reusable buffers for the per-frame pass (large per-call
    allocations would serialize sibling threads on teardown)."""
    scratch = getattr(_TLS, "scratch", None)
    if scratch is None or scratch["shape"] != shape:
        scratch = {
            "shape": shape,
            "diff": np.empty(shape, dtype=np.float64),
            "mask": np.empty(shape, dtype=bool),
        }
        _TLS.scratch = scratch
    return scratch


def _block_work(args) -> _BlockResult:
    pred_frames, obs_frames, config = args
    heavy_p, heavy_o, track_p, track_o, ssq = [], [], [], [], []
    sum_p = np.zeros(pred_frames[0].values.shape, dtype=np.float64)
    sum_o = np.zeros_like(sum_p)
    scratch = _frame_scratch(sum_p.shape)
    diff, mask = scratch["diff"], scratch["mask"]
    thr = config.heavy_threshold
    for p, o in zip(pred_frames, obs_frames):
        np.greater_equal(p.values, thr, out=mask)
        heavy_p.append(int(np.count_nonzero(mask)))
        np.greater_equal(o.values, thr, out=mask)
        heavy_o.append(int(np.count_nonzero(mask)))
        track_p.append(main_cluster(p, config.cluster))
        track_o.append(main_cluster(o, config.cluster))
        np.subtract(p.values, o.values, out=diff, dtype=np.float64)
        ssq.append(float(np.einsum("ij,ij->", diff, diff)))
        sum_p += p.values
        sum_o += o.values
    return _BlockResult(heavy_p, heavy_o, track_p, track_o, ssq, sum_p, sum_o)


def evaluate(
    pred: PrecipSequence,
    obs: PrecipSequence,
    config: MetricConfig = MetricConfig(),
    workers: int = 1,
) -> MetricReport:
    """Score a prediction sequence against observations.

    ``workers`` only controls threading; block-structured reduction keeps
    the report bit-identical for any worker count.
    """
    check_aligned(pred, obs)
    t = len(pred)
    if t < 2:
        raise TooShort("evaluation needs at least 2 frames")

    blocks = [
        (pred.frames[i : i + BLOCK_FRAMES], obs.frames[i : i + BLOCK_FRAMES], config)
        for i in range(0, t, BLOCK_FRAMES)
    ]
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        map_fn = executor.map if executor is not None else map
        results = list(map_fn(_block_work, blocks))
        qp = _pooled_nearest_rank([f.values for f in pred], config.quantile_tau, map_fn=map_fn)
        qo = _pooled_nearest_rank([f.values for f in obs], config.quantile_tau, map_fn=map_fn)
    finally:
        if executor is not None:
            executor.shutdown()

    heavy_p = [h for r in results for h in r.heavy_pred]
    heavy_o = [h for r in results for h in r.heavy_obs]
    track_p = [s for r in results for s in r.track_pred]
    track_o = [s for r in results for s in r.track_obs]
    ssq = [s for r in results for s in r.ssq]
    sum_p = results[0].sum_pred
    sum_o = results[0].sum_obs
    for r in results[1:]:
        sum_p = sum_p + r.sum_pred
        sum_o = sum_o + r.sum_obs

    geom = pred.geometry
    area = geom.pixel_area_km2
    hrre_value = math.fsum(abs(a - b) * area for a, b in zip(heavy_p, heavy_o)) / t
    md = sum_p / t - sum_o / t
    cpmse_value = float(np.mean(md * md))
    ammd_value, ammd_n = _ammd_from_tracks(track_p, track_o)
    cmd_value, cmd_n = _cmd_from_tracks(track_p, track_o)
    hrts_value, hrts_n = _hrts_from_tracks(track_p, track_o, geom.timestep_hours)
    rmse_value = math.sqrt(math.fsum(ssq) / (t * geom.n_pixels))

    sub = {
        "mppe": abs(qp - qo),
        "hrre": hrre_value,
        "ammd": ammd_value,
        "cpmse": cpmse_value,
        "hrts": hrts_value,
        "cmd": cmd_value,
    }
    frames_used = {
        "mppe": t,
        "hrre": t,
        "ammd": ammd_n,
        "cpmse": t,
        "hrts": hrts_n,
        "cmd": cmd_n,
        "rmse": t,
    }
    return report_from_sub_metrics(sub, rmse_value, frames_used, config.amo)


# -- non-canonical diagnostics ----------------------------------------------


def field_derivative_diagnostics(pred: PrecipSequence, obs: PrecipSequence) -> dict:
    """RMSE of first-order field derivatives (temporal and spatial).

    Non-canonical diagnostic only: the canonical dynamics metrics (hrts,
    cmd) track main-cluster motion in km/hour and km; these field
    variants carry rain-rate units instead and are not part of
    ``MetricReport``.
    """
    check_aligned(pred, obs)
    if len(pred) < 2:
        raise TooShort("temporal derivative needs at least 2 frames")
    dt = pred.geometry.timestep_hours
    ps = pred.geometry.pixel_size_km
    n = pred.geometry.n_pixels

    t_sq = []
    for i in range(1, len(pred)):
        dp = (pred[i].values64() - pred[i - 1].values64()) / dt
        do = (obs[i].values64() - obs[i - 1].values64()) / dt
        t_sq.append(float(np.sum(np.square(dp - do), dtype=np.float64)))
    temporal = math.sqrt(math.fsum(t_sq) / ((len(pred) - 1) * n))

    s_sq = []
    for p, o in zip(pred, obs):
        gpr, gpc = np.gradient(p.values64(), ps)
        gor, goc = np.gradient(o.values64(), ps)
        s_sq.append(
            float(
                np.sum(np.square(gpr - gor), dtype=np.float64)
                + np.sum(np.square(gpc - goc), dtype=np.float64)
            )
        )
    spatial = math.sqrt(math.fsum(s_sq) / (2 * len(pred) * n))

    return {
        "temporal_derivative_rmse": temporal,
        "spatial_gradient_rmse": spatial,
    }
