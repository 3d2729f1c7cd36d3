"""Main-rainfall-system extraction: connected components above a rain
threshold, with mass, rainfall-weighted centroid, and principal
orientation.

The "main" system of a frame is the component with the largest total mass
(sum of member rain rates); ties fall back to pixel count, then to the
smallest row-major first-pixel index, so labeling is reproducible across
runs and backends.

Orientation is the principal-axis angle of the rainfall-weighted
coordinate covariance, reduced to [0, pi).  A covariance with no usable
eigenvalue gap (single pixels, perfectly isotropic blobs) has no
well-defined axis; those clusters report orientation 0 with
``orientation_degenerate=True``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidConfig
from .grid import PrecipFrame

#: Relative eigenvalue-gap floor below which a covariance counts as isotropic.
ISOTROPY_REL_GAP = 1e-12
#: Absolute variance floor (km^2); spreads below this are point-like.
_VARIANCE_FLOOR_KM2 = 1e-9

_TLS = threading.local()


def _labels_for(frame: PrecipFrame, config: "ClusterConfig"):
    """Label a frame through this thread's reusable workspace."""
    shape = (frame.geometry.rows, frame.geometry.cols)
    ws = getattr(_TLS, "ws", None)
    if ws is None or ws["shape"] != shape:
        ws = kernels.make_workspace(*shape)
        _TLS.ws = ws
    return kernels.label_grid(frame.values, config.rain_threshold, config.connectivity, ws)


@dataclass(frozen=True)
class ClusterConfig:
    """Extraction parameters for rainfall components."""

    rain_threshold: float = 1.0
    connectivity: int = 8
    main_by: str = "mass"

    def __post_init__(self):
        if not self.rain_threshold > 0:
            raise InvalidConfig(f"rain_threshold must be > 0, got {self.rain_threshold}")
        if self.connectivity not in (4, 8):
            raise InvalidConfig(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.main_by not in ("mass", "pixel_count"):
            raise InvalidConfig(f"main_by must be 'mass' or 'pixel_count', got {self.main_by!r}")


@dataclass(frozen=True)
class ClusterStats:
    """Summary of one rainfall component.

    ``centroid_km`` is (x, y) = (col, row) * pixel_size_km, weighted by
    rain rate. ``orientation_rad`` is in [0, pi).
    """

    mass: float
    pixel_count: int
    centroid_km: tuple[float, float]
    orientation_rad: float
    orientation_degenerate: bool = field(default=False, compare=False)


def principal_orientation(cxx: float, cyy: float, cxy: float) -> tuple[float, bool]:
    """Principal-axis angle of a 2x2 covariance [[cxx, cxy], [cxy, cyy]].

    Returns ``(theta in [0, pi), degenerate)``; degenerate covariances
    (eigenvalue gap below ``ISOTROPY_REL_GAP`` relative, or point-like
    spread) pin theta to 0.
    """
    gap = math.hypot(cxx - cyy, 2.0 * cxy)  # = lambda_max - lambda_min
    lam_max = 0.5 * ((cxx + cyy) + gap)
    if lam_max < _VARIANCE_FLOOR_KM2 or gap < ISOTROPY_REL_GAP * lam_max:
        return 0.0, True
    theta = 0.5 * math.atan2(2.0 * cxy, cxx - cyy)
    if theta < 0.0:
        theta += math.pi
    if theta >= math.pi:
        theta = 0.0
    return theta, False


def label_components(frame: PrecipFrame, config: ClusterConfig = ClusterConfig()):
    """All connected components at or above the rain threshold.

    Returns a list of pixel sets ``{(row, col), ...}``, ordered by each
    component's first row-major pixel. Empty list when nothing is wet.
    """
    labels, n = _labels_for(frame, config)
    if n == 0:
        return []
    flat = labels.ravel()
    sel = np.flatnonzero(flat)
    comps: list[set[tuple[int, int]]] = [set() for _ in range(n)]
    cols = frame.geometry.cols
    for idx, lab in zip(sel.tolist(), flat[sel].tolist()):
        comps[lab - 1].add((idx // cols, idx % cols))
    return comps


def all_cluster_stats(frame: PrecipFrame, config: ClusterConfig = ClusterConfig()):
    """ClusterStats for every component, in label order."""
    labels, n = _labels_for(frame, config)
    if n == 0:
        return []
    counts, mass, mean_col, mean_row, cxx, cyy, cxy, _ = kernels.component_moments(
        labels, frame.values, n
    )
    ps = frame.geometry.pixel_size_km
    ps2 = ps * ps
    out = []
    for i in range(n):
        theta, degen = principal_orientation(
            cxx[i] / mass[i] * ps2, cyy[i] / mass[i] * ps2, cxy[i] / mass[i] * ps2
        )
        out.append(
            ClusterStats(
                mass=float(mass[i]),
                pixel_count=int(counts[i]),
                centroid_km=(float(mean_col[i] * ps), float(mean_row[i] * ps)),
                orientation_rad=theta,
                orientation_degenerate=degen,
            )
        )
    return out


def main_cluster(frame: PrecipFrame, config: ClusterConfig = ClusterConfig()):
    """Stats of the dominant rainfall component, or ``None`` when the frame
    has no pixel at or above the threshold."""
    labels, n = _labels_for(frame, config)
    if n == 0:
        return None
    counts, mass, mean_col, mean_row, cxx, cyy, cxy, first = kernels.component_moments(
        labels, frame.values, n
    )
    if config.main_by == "mass":
        order = np.lexsort((first, -counts, -mass))
    else:
        order = np.lexsort((first, -mass, -counts))
    i = int(order[0])
    ps = frame.geometry.pixel_size_km
    ps2 = ps * ps
    theta, degen = principal_orientation(
        cxx[i] / mass[i] * ps2, cyy[i] / mass[i] * ps2, cxy[i] / mass[i] * ps2
    )
    return ClusterStats(
        mass=float(mass[i]),
        pixel_count=int(counts[i]),
        centroid_km=(float(mean_col[i] * ps), float(mean_row[i] * ps)),
        orientation_rad=theta,
        orientation_degenerate=degen,
    )
