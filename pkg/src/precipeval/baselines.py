"""Classical LR -> HR downscalers: nearest, bilinear, bicubic
interpolation, and ordinary kriging with per-frame variogram fitting.

Resampling uses pixel-center alignment: output pixel ``i`` samples source
coordinate ``(i + 0.5) / factor - 0.5`` with replicate-clamped borders,
the convention of mainstream tensor libraries. The cubic kernel is the
two-parameter-family convolution kernel with ``a = -0.5`` by default.

Kriging treats LR pixel centers as observations and solves one ordinary
kriging system (weights constrained to sum to 1) per HR pixel over its k
nearest observations; the variogram is refit per frame because spatial
correlation differs strongly between storm types. Constant fields short-
circuit to the exact constant answer (which is what the equations yield)
before any floating-point solve can smear it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidConfig, NotEnoughData, TooSmall
from .grid import DEFAULT_WET_THRESHOLD, GridGeometry, PrecipFrame

_SILL_FLOOR = 1e-12
_VARIOGRAM_KINDS = ("exponential", "spherical", "gaussian")


# -- interpolation upsamplers ------------------------------------------------


def _upsampled_geometry(g: GridGeometry, factor: int) -> GridGeometry:
    return GridGeometry(
        rows=g.rows * factor,
        cols=g.cols * factor,
        pixel_size_km=g.pixel_size_km / factor,
        timestep_hours=g.timestep_hours,
    )


def upsample_nearest(lr: PrecipFrame, factor: int) -> PrecipFrame:
    """Replicate each LR pixel into a factor x factor HR block."""
    factor = int(factor)
    if factor < 1:
        raise InvalidConfig(f"factor must be >= 1, got {factor}")
    out = np.repeat(np.repeat(lr.values, factor, axis=0), factor, axis=1)
    out.flags.writeable = False
    return PrecipFrame(_upsampled_geometry(lr.geometry, factor), out, lr.timestamp)


def cubic_kernel(s, a: float = -0.5):
    """Piecewise-cubic convolution kernel, support (-2, 2)."""
    s = np.abs(np.asarray(s, dtype=np.float64))
    out = np.zeros_like(s)
    near = s <= 1.0
    out[near] = ((a + 2.0) * s[near] - (a + 3.0)) * s[near] ** 2 + 1.0
    far = (s > 1.0) & (s < 2.0)
    sf = s[far]
    out[far] = a * (sf * (sf * (sf - 5.0) + 8.0) - 4.0)
    return out


def _linear_kernel(s):
    s = np.abs(np.asarray(s, dtype=np.float64))
    return np.maximum(0.0, 1.0 - s)


def _interp_matrix(n_in: int, factor: int, kernel: Callable, support: int) -> np.ndarray:
    """Dense 1-D interpolation operator (n_in*factor, n_in).

    Border taps are clamped to the edge samples (replicate padding), so
    each row still sums to the kernel's partition of unity.
    """
    n_out = n_in * factor
    w = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        src = (i + 0.5) / factor - 0.5
        base = math.floor(src)
        for tap in range(base - support + 1, base + support + 1):
            col = min(max(tap, 0), n_in - 1)
            w[i, col] += float(kernel(tap - src))
    return w


def _constant_fill(lr: PrecipFrame, factor: int) -> PrecipFrame:
    out = np.full(
        (lr.geometry.rows * factor, lr.geometry.cols * factor),
        lr.values.flat[0],
        dtype=np.float64,
    )
    out.flags.writeable = False
    return PrecipFrame(_upsampled_geometry(lr.geometry, factor), out, lr.timestamp)


def _separable_upsample(lr: PrecipFrame, factor: int, kernel, support: int, clamp: bool) -> PrecipFrame:
    g = lr.geometry
    if np.ptp(lr.values) == 0:
        return _constant_fill(lr, factor)
    wr = _interp_matrix(g.rows, factor, kernel, support)
    wc = _interp_matrix(g.cols, factor, kernel, support)
    out = wr @ lr.values64() @ wc.T
    if clamp:
        np.maximum(out, 0.0, out=out)
    out.flags.writeable = False
    return PrecipFrame(_upsampled_geometry(g, factor), out, lr.timestamp)


def upsample_bilinear(lr: PrecipFrame, factor: int) -> PrecipFrame:
    """Separable linear interpolation with pixel-center alignment."""
    factor = int(factor)
    if factor < 1:
        raise InvalidConfig(f"factor must be >= 1, got {factor}")
    return _separable_upsample(lr, factor, _linear_kernel, 1, clamp=False)


def upsample_bicubic(lr: PrecipFrame, factor: int, kernel_a: float = -0.5) -> PrecipFrame:
    """Separable cubic convolution; negative overshoot is clamped to 0."""
    factor = int(factor)
    if factor < 1:
        raise InvalidConfig(f"factor must be >= 1, got {factor}")
    if lr.geometry.rows < 2 or lr.geometry.cols < 2:
        raise TooSmall("bicubic needs at least a 2x2 input")
    return _separable_upsample(
        lr, factor, lambda s: cubic_kernel(s, kernel_a), 2, clamp=True
    )


# -- variograms ----------------------------------------------------------


class VariogramBin(NamedTuple):
    distance_km: float
    gamma: float
    pair_count: int


@dataclass(frozen=True)
class Semivariogram:
    """Empirical semivariance per distance bin."""

    lags: tuple[VariogramBin, ...]
    max_lag_km: float
    bin_width_km: float


@dataclass(frozen=True)
class VariogramModel:
    """Fitted bounded variogram: gamma(0) = nugget, approaching sill at
    the effective range."""

    kind: str
    nugget: float
    sill: float
    range_km: float
    degenerate: bool = False

    def __post_init__(self):
        if self.kind not in _VARIOGRAM_KINDS:
            raise InvalidConfig(f"unknown variogram kind {self.kind!r}")
        if not (0 <= self.nugget <= self.sill and self.range_km > 0):
            raise InvalidConfig(
                f"need 0 <= nugget <= sill and range > 0, got "
                f"nugget={self.nugget}, sill={self.sill}, range={self.range_km}"
            )

    def gamma(self, h):
        """Semivariance at separation h (km); gamma(0) is exactly 0, the
        nugget is the h -> 0+ limit."""
        h = np.asarray(h, dtype=np.float64)
        psill = self.sill - self.nugget
        r = self.range_km
        if self.kind == "exponential":
            shape = 1.0 - np.exp(-3.0 * h / r)
        elif self.kind == "gaussian":
            shape = 1.0 - np.exp(-3.0 * (h / r) ** 2)
        else:  # spherical
            hr = np.minimum(h / r, 1.0)
            shape = 1.5 * hr - 0.5 * hr**3
        return np.where(h == 0.0, 0.0, self.nugget + psill * shape)


def empirical_semivariogram(
    frame: PrecipFrame,
    bin_width_km: Optional[float] = None,
    max_lag_km: Optional[float] = None,
    sample_cap: int = 200_000,
    wet_threshold: float = DEFAULT_WET_THRESHOLD,
    seed: int = 0,
) -> Semivariogram:
    """Binned gamma(h) = mean of (z_i - z_j)^2 / 2 over pixel pairs.

    All grid pixels participate; the wet-pixel precondition only rejects
    frames too dry to carry spatial structure. When the full pair count
    exceeds ``sample_cap``, pairs are drawn uniformly (with replacement)
    from a seeded generator, so results are reproducible.
    """
    g = frame.geometry
    ps = g.pixel_size_km
    if bin_width_km is None:
        bin_width_km = ps
    if max_lag_km is None:
        max_lag_km = 12.0 * ps
    if bin_width_km <= 0 or max_lag_km <= bin_width_km:
        raise InvalidConfig("need 0 < bin_width_km < max_lag_km")
    if int(np.count_nonzero(frame.values >= wet_threshold)) < 2:
        raise NotEnoughData("semivariogram needs at least 2 wet pixels")

    z = frame.values64().ravel()
    n = z.size
    total_pairs = n * (n - 1) // 2
    if total_pairs <= sample_cap:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        i = rng.integers(0, n, size=sample_cap)
        j = rng.integers(0, n, size=sample_cap)
        keep = i != j
        i, j = i[keep], j[keep]

    dx = (i % g.cols).astype(np.float64) - (j % g.cols).astype(np.float64)
    dy = (i // g.cols).astype(np.float64) - (j // g.cols).astype(np.float64)
    d = np.hypot(dx * ps, dy * ps)
    keep = d <= max_lag_km
    d = d[keep]
    if d.size == 0:
        raise NotEnoughData("no pixel pairs within max_lag_km")
    sq = 0.5 * np.square(z[i[keep]] - z[j[keep]])

    n_bins = int(math.ceil(max_lag_km / bin_width_km))
    b = np.minimum((d / bin_width_km).astype(np.int64), n_bins - 1)
    counts = np.bincount(b, minlength=n_bins)
    gamma_sum = np.bincount(b, weights=sq, minlength=n_bins)
    dist_sum = np.bincount(b, weights=d, minlength=n_bins)
    lags = tuple(
        VariogramBin(float(dist_sum[k] / counts[k]), float(gamma_sum[k] / counts[k]), int(counts[k]))
        for k in range(n_bins)
        if counts[k] > 0
    )
    return Semivariogram(lags=lags, max_lag_km=float(max_lag_km), bin_width_km=float(bin_width_km))


def _golden_min(fn, lo: float, hi: float, iters: int = 90):
    """Golden-section minimum of fn on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    x = c if fc <= fd else d
    return x, min(fc, fd)


def fit_variogram_model(emp: Semivariogram, kind: str = "exponential") -> VariogramModel:
    """Weighted least squares (weights = pair counts) by bounded
    coordinate descent over (nugget, sill, range).

    Starts from nugget = first-bin gamma, sill = max gamma, range = half
    the max lag; stops when the relative objective change drops below
    1e-8 or after 200 sweeps. Line searches only ever accept
    improvements, so the objective is monotone non-increasing.
    """
    if kind not in _VARIOGRAM_KINDS:
        raise InvalidConfig(f"unknown variogram kind {kind!r}")
    if len(emp.lags) < 3:
        raise NotEnoughData(f"need >= 3 non-empty bins, got {len(emp.lags)}")
    h = np.array([lag.distance_km for lag in emp.lags])
    gam = np.array([lag.gamma for lag in emp.lags])
    w = np.array([lag.pair_count for lag in emp.lags], dtype=np.float64)

    gmax = float(gam.max())
    if gmax == 0.0:
        return VariogramModel(kind, 0.0, _SILL_FLOOR, emp.max_lag_km / 2.0, degenerate=True)

    def objective(nugget, sill, rng_km):
        model = VariogramModel(kind, nugget, sill, rng_km)
        resid = model.gamma(h) - gam
        return float(np.sum(w * resid * resid))

    sill = gmax
    nugget = min(float(gam[0]), sill)
    rng_km = emp.max_lag_km / 2.0
    best = objective(nugget, sill, rng_km)
    range_lo = emp.bin_width_km / 10.0
    for _ in range(200):
        prev = best

        x, fx = _golden_min(lambda v: objective(v, sill, rng_km), 0.0, sill)
        if fx < best:
            nugget, best = x, fx
        x, fx = _golden_min(lambda v: objective(nugget, v, rng_km), max(nugget, _SILL_FLOOR), 2.0 * gmax)
        if fx < best:
            sill, best = x, fx
        x, fx = _golden_min(lambda v: objective(nugget, sill, v), range_lo, 2.0 * emp.max_lag_km)
        if fx < best:
            rng_km, best = x, fx

        if prev - best <= 1e-8 * max(prev, 1e-300):
            break
    return VariogramModel(kind, nugget, sill, rng_km)


# -- ordinary kriging ----------------------------------------------------


@dataclass
class KrigingDiagnostics:
    """Numerical health of one kriged frame."""

    max_weight_sum_error: float = 0.0
    singular_fallback_pixels: int = 0
    used_nearest_fallback: bool = False
    variogram: Optional[VariogramModel] = None


def kriging_downscale(
    lr: PrecipFrame,
    factor: int,
    kind: str = "exponential",
    neighborhood_k: int = 16,
    wet_threshold: float = DEFAULT_WET_THRESHOLD,
    variogram: Optional[VariogramModel] = None,
    diagnostics: bool = False,
    seed: int = 0,
):
    """Ordinary kriging from LR pixel centers to HR pixel centers.

    Each HR pixel is predicted from its ``neighborhood_k`` nearest LR
    observations by solving the (k+1)x(k+1) system with the unbiasedness
    row (weights sum to 1). Singular systems fall back to the nearest
    observation value, counted in the diagnostics. Output is clamped to
    non-negative rates.
    """
    factor = int(factor)
    if factor < 1:
        raise InvalidConfig(f"factor must be >= 1, got {factor}")
    if neighborhood_k < 3:
        raise InvalidConfig(f"neighborhood_k must be >= 3, got {neighborhood_k}")
    g = lr.geometry
    diag = KrigingDiagnostics()

    if np.ptp(lr.values) == 0:
        out = _constant_fill(lr, factor)
        return (out, diag) if diagnostics else out

    if variogram is None:
        try:
            emp = empirical_semivariogram(lr, wet_threshold=wet_threshold, seed=seed)
            variogram = fit_variogram_model(emp, kind)
        except NotEnoughData:
            # Too dry to carry spatial structure; nearest is the honest answer.
            diag.used_nearest_fallback = True
            out = upsample_nearest(lr, factor)
            return (out, diag) if diagnostics else out
    diag.variogram = variogram

    ps = g.pixel_size_km
    z = lr.values64().ravel()
    n = z.size
    k = min(neighborhood_k, n)
    i_idx = np.arange(n)
    obs_xy = np.column_stack(((i_idx % g.cols) * ps, (i_idx // g.cols) * ps))
    tree = cKDTree(obs_xy)

    hr_rows, hr_cols = g.rows * factor, g.cols * factor
    hx = (((np.arange(hr_cols) + 0.5) / factor) - 0.5) * ps
    hy = (((np.arange(hr_rows) + 0.5) / factor) - 0.5) * ps
    gx, gy = np.meshgrid(hx, hy)
    targets = np.column_stack((gx.ravel(), gy.ravel()))

    scale = max(variogram.sill, _SILL_FLOOR)
    pred = np.empty(n * factor * factor, dtype=np.float64)
    max_wsum_err = 0.0
    singular = 0

    chunk = 8192
    for start in range(0, targets.shape[0], chunk):
        t_xy = targets[start : start + chunk]
        dist, idx = tree.query(t_xy, k=k)
        if k == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        m = t_xy.shape[0]
        pts = obs_xy[idx]  # (m, k, 2)
        sep = pts[:, :, None, :] - pts[:, None, :, :]
        dmat = np.sqrt(np.sum(sep * sep, axis=-1))
        a = np.empty((m, k + 1, k + 1), dtype=np.float64)
        a[:, :k, :k] = variogram.gamma(dmat) / scale
        a[:, k, :k] = 1.0
        a[:, :k, k] = 1.0
        a[:, k, k] = 0.0
        b = np.empty((m, k + 1), dtype=np.float64)
        b[:, :k] = variogram.gamma(dist) / scale
        b[:, k] = 1.0
        try:
            sol = np.linalg.solve(a, b[..., None])[..., 0]
            weights = sol[:, :k]
        except np.linalg.LinAlgError:
            weights = np.empty((m, k), dtype=np.float64)
            for p in range(m):
                try:
                    weights[p] = np.linalg.solve(a[p], b[p])[:k]
                except np.linalg.LinAlgError:
                    weights[p] = 0.0
                    weights[p, 0] = 1.0  # nearest observation
                    singular += 1
        pred[start : start + chunk] = np.sum(weights * z[idx], axis=1)
        err = np.abs(np.sum(weights, axis=1) - 1.0)
        max_wsum_err = max(max_wsum_err, float(err.max()))

    diag.max_weight_sum_error = max_wsum_err
    diag.singular_fallback_pixels = singular
    out = np.maximum(pred, 0.0).reshape(hr_rows, hr_cols)
    out.flags.writeable = False
    frame = PrecipFrame(_upsampled_geometry(g, factor), out, lr.timestamp)
    return (frame, diag) if diagnostics else frame


#: Registry used by the harness and CLI; every entry maps an LR frame to HR.
UPSAMPLERS = {
    "nearest": upsample_nearest,
    "bilinear": upsample_bilinear,
    "bicubic": upsample_bicubic,
    "kriging": kriging_downscale,
}
