import numpy as np
import pytest

from precipeval import GridGeometry, PrecipFrame, PrecipSequence, write_pair
from precipeval.synth import EventConfig, SensorConfig, degrade, generate_event


def make_frame(values, pixel_size_km=4.0, timestamp=0, timestep_hours=1.0):
    values = np.asarray(values)
    geom = GridGeometry(
        rows=values.shape[0],
        cols=values.shape[1],
        pixel_size_km=pixel_size_km,
        timestep_hours=timestep_hours,
    )
    return PrecipFrame(geom, values, timestamp)


def make_sequence(stack, pixel_size_km=4.0, t0=0):
    stack = np.asarray(stack)
    geom = GridGeometry(rows=stack.shape[1], cols=stack.shape[2], pixel_size_km=pixel_size_km)
    return PrecipSequence.from_array(geom, stack, t0=t0)


def random_rain(rng, rows, cols, wet_fraction=0.3, scale=8.0, dtype=np.float64):
    """Random rain field: mostly dry with exponential wet amounts."""
    v = rng.exponential(scale, size=(rows, cols))
    v[rng.random((rows, cols)) > wet_fraction] = 0.0
    return v.astype(dtype)


def desk_event(seed, template="hurricane", n_frames=12, rows=96, cols=96):
    cfg = EventConfig(
        geometry=GridGeometry(rows=rows, cols=cols, pixel_size_km=4.0),
        n_frames=n_frames,
        template=template,
    )
    return generate_event(cfg, seed=seed)


def build_corpus(root, years=(2001, 2002, 2003), months=(7, 8), n_frames=10, noisy=True):
    """Write a small synthetic corpus of monthly pair files."""
    root.mkdir(parents=True, exist_ok=True)
    sensor = SensorConfig(gain=1.05, noise_sigma=0.05) if noisy else SensorConfig()
    k = 0
    for year in years:
        for month in months:
            template = "hurricane" if k % 2 == 0 else "squall"
            hr, _ = desk_event(1000 + k, template=template, n_frames=n_frames)
            lr = degrade(hr, sensor, factor=3, seed=k)
            write_pair(root / f"{year}-{month:02d}.rnb", hr, lr)
            k += 1
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
