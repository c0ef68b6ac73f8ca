"""Synthetic ECG chart pages with exact per-lead ink masks.

Each lead is drawn as a one-pixel polyline. Sample columns carry exactly the
sample's row; the columns between two samples carry a vertical run joining
them, so consecutive columns always touch under the 5-step neighbourhood.
When `pixels_per_sample` is 1 there are no in-between columns and the run is
drawn in the sample column itself, from the sample's row toward the next one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import EcgraphError
from .leadtrace import CalibrationConfig
from .raster import LayoutConfig, RasterImage, band_of, save_image
from .records import LEADS, SignalRecord, atomic_write


class RenderError(EcgraphError):
    pass


class BandOverflow(RenderError):
    pass


@dataclass(frozen=True)
class Drift:
    """Slow downward wander of depth `amplitude_mv`.

    Without an onset the wander is periodic over the whole strip,
    offset(t) = -amplitude * (1 - cos(2 pi t / period)) / 2. With `onset_s` it is
    a single dip of that shape spanning [onset, onset + period] and zero elsewhere.
    """

    amplitude_mv: float
    period_s: float
    onset_s: float | None = None

    def __post_init__(self):
        if self.amplitude_mv < 0:
            raise ValueError("drift amplitude must be >= 0")
        if not self.period_s > 0:
            raise ValueError("drift period must be > 0")

    def offset(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        phase = t if self.onset_s is None else t - self.onset_s
        out = -self.amplitude_mv * (1 - np.cos(2 * np.pi * phase / self.period_s)) / 2
        if self.onset_s is not None:
            out = np.where((phase >= 0) & (phase <= self.period_s), out, 0.0)
        return out


@dataclass
class RenderConfig:
    layout: LayoutConfig
    cal: CalibrationConfig
    drift: dict[str, Drift] = field(default_factory=dict)
    line_thickness: int = 1
    antialias: bool = False
    rng_seed: int = 0
    allow_crossings: bool = False
    grid: bool = True
    noise: int = 0
    ink_color: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if self.line_thickness < 1:
            raise ValueError("line_thickness must be >= 1")
        if self.layout.page_size is None:
            raise ValueError("rendering needs a layout with page_size")


@dataclass
class RenderResult:
    image: RasterImage
    masks: dict[str, np.ndarray]
    baselines: dict[str, int]
    sample_rows: dict[str, np.ndarray]
    cfg: RenderConfig

    def truth(self) -> SignalRecord:
        """The quantized signal exactly as drawn (drift included)."""
        p = self.cfg.cal.gain_mv_per_pixel
        leads = {k: (self.baselines[k] - rows) * p for k, rows in self.sample_rows.items()}
        return SignalRecord(leads, self.cfg.cal.sample_rate_hz, p)

    def intersections(self) -> dict[str, int]:
        """Pixel count shared by each pair of lead masks, for non-empty pairs."""
        out = {}
        for a, b in combinations(self.masks, 2):
            n = int(np.count_nonzero(self.masks[a] & self.masks[b]))
            if n:
                out[f"{a}|{b}"] = n
        return out

    def sidecar(self) -> dict:
        cal = self.cfg.cal
        return {
            "sample_rate_hz": cal.sample_rate_hz,
            "gain_mv_per_pixel": cal.gain_mv_per_pixel,
            "pixels_per_sample": cal.pixels_per_sample,
            "rng_seed": self.cfg.rng_seed,
            "baselines": dict(self.baselines),
            "sample_rows": {k: v.tolist() for k, v in self.sample_rows.items()},
            "mask_intersections": self.intersections(),
            "drift": {k: [d.amplitude_mv, d.period_s] for k, d in self.cfg.drift.items()},
        }


def _column_spans(rows: np.ndarray, cols: np.ndarray, n_columns: int):
    """Row span (lo, hi) of the polyline in each band column."""
    rows = rows.astype(np.int64)
    if n_columns == cols.size:
        nxt = np.append(rows[1:], rows[-1])
        step = np.sign(nxt - rows)
        far = np.where(np.abs(nxt - rows) > 1, nxt - step, rows)
        return np.minimum(rows, far), np.maximum(rows, far)
    c = np.arange(n_columns)
    k = np.searchsorted(cols, c, side="right") - 1
    on_sample = cols[k] == c
    k1 = np.minimum(k + 1, cols.size - 1)
    m = np.maximum(cols[k1] - cols[k] - 1, 1)
    j = c - cols[k]
    delta = (rows[k1] - rows[k]).astype(float)
    a = np.rint(rows[k] + delta * (j - 1) / m).astype(np.int64)
    b = np.rint(rows[k] + delta * j / m).astype(np.int64)
    lo = np.where(on_sample, rows[k], np.minimum(a, b))
    hi = np.where(on_sample, rows[k], np.maximum(a, b))
    return lo, hi


def _paint(height: int, x0: int, lo: np.ndarray, hi: np.ndarray, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    n = hi - lo + 1
    cols = np.repeat(np.arange(lo.size) + x0, n)
    rows = np.repeat(lo, n) + (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n))
    mask[rows, cols] = True
    return mask


def draw_grid(px: np.ndarray, color, minor: int = 5, major: int = 25) -> None:
    color = np.asarray(color, dtype=np.int16)
    dark = np.clip(color - np.array([20, 50, 50]), 0, 255).astype(np.uint8)
    px[::minor, :] = color
    px[:, ::minor] = color
    px[::major, :] = dark
    px[:, ::major] = dark


def render_record(rec: SignalRecord, cfg: RenderConfig) -> RenderResult:
    """Draw every lead of `rec` into the layout's bands."""
    if not 1 <= len(rec.leads) <= 12:
        raise RenderError("a record must carry between 1 and 12 leads")
    layout, cal = cfg.layout, cfg.cal
    width, height = layout.page_size
    rng = np.random.default_rng(cfg.rng_seed)
    px = np.full((height, width, 3), 255, dtype=np.uint8)
    if cfg.grid:
        draw_grid(px, layout.grid_color)
    if cfg.noise:
        jitter = rng.integers(-cfg.noise, cfg.noise + 1, size=px.shape)
        px = np.clip(px.astype(np.int16) + jitter, 0, 255).astype(np.uint8)

    masks, baselines, sample_rows = {}, {}, {}
    up, down = (cfg.line_thickness - 1) // 2, cfg.line_thickness // 2
    for lead in rec.lead_ids:
        band = band_of(layout, lead)
        n_cols = band.n_columns
        cols = cal.sample_columns(n_cols)
        values = rec.leads[lead]
        if values.size != cols.size:
            raise RenderError(f"lead {lead}: {values.size} samples, band holds {cols.size}")
        if lead in cfg.drift:
            t = np.arange(values.size) / cal.sample_rate_hz
            values = values + cfg.drift[lead].offset(t)
        b = (band.row_top + band.row_bottom) // 2
        rows = b - np.rint(values / cal.gain_mv_per_pixel).astype(np.int64)
        lo, hi = _column_spans(rows, cols, n_cols)
        lo, hi = lo - up, hi + down
        if lo.min() < 0 or hi.max() >= height:
            raise BandOverflow(f"lead {lead} leaves the page")
        if not cfg.allow_crossings and (lo.min() < band.row_top or hi.max() > band.row_bottom):
            raise BandOverflow(f"lead {lead} leaves its band rows "
                               f"{band.row_top}..{band.row_bottom}")
        masks[lead] = _paint(height, band.x_start, lo, hi, width)
        baselines[lead] = int(b)
        sample_rows[lead] = rows

    ink = np.zeros((height, width), dtype=bool)
    for m in masks.values():
        ink |= m
    if cfg.antialias:
        halo = np.zeros_like(ink)
        halo[1:] |= ink[:-1]
        halo[:-1] |= ink[1:]
        halo &= ~ink
        shade = rng.integers(90, 201, size=int(np.count_nonzero(halo)))
        px[halo] = shade[:, None].astype(np.uint8)
    px[ink] = cfg.ink_color
    return RenderResult(RasterImage(px), masks, baselines, sample_rows, cfg)


def write_render(result: RenderResult, out_dir, stem: str) -> list[Path]:
    """Page PNG, one mask PNG per lead and a JSON ground-truth sidecar."""
    out_dir = Path(out_dir)
    paths = [save_image(result.image, out_dir / f"{stem}.png")]
    for lead, mask in result.masks.items():
        paths.append(save_image(mask, out_dir / f"{stem}.mask.{lead}.png"))
    side = out_dir / f"{stem}.truth.json"
    atomic_write(side, json.dumps(result.sidecar(), indent=2, sort_keys=True) + "\n")
    paths.append(side)
    return paths


# -- synthetic signals --------------------------------------------------------

SIGNAL_KINDS = ("zeros", "sine", "square", "ecg")


def ecg_like(n: int, fs: float, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Sum-of-Gaussians heartbeat train (P, Q, R, S, T) at a random rate."""
    t = np.arange(n) / fs
    rr = 60.0 / rng.uniform(60, 100)
    first = rng.uniform(0.1, rr)
    waves = ((-0.20, 0.15, 0.025), (-0.04, -0.10, 0.010), (0.0, 1.0, 0.012),
             (0.04, -0.25, 0.010), (0.25, 0.30, 0.040))
    out = np.zeros(n)
    beat = first
    while beat < t[-1] + 0.5:
        for offset, amp, width in waves:
            out += amp * np.exp(-0.5 * ((t - beat - offset) / width) ** 2)
        beat += rr
    return scale * out


def synth_signal(kind: str, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / fs
    if kind == "zeros":
        return np.zeros(n)
    if kind == "sine":
        # a tone burst: whole half-cycles over part of the strip, flat baseline elsewhere
        width = int(n * rng.uniform(0.3, 0.6))
        start = int(rng.integers(0, n - width + 1))
        half_cycles = int(rng.integers(1, 2 * max(1, int(width / fs * 5)) + 1))
        amp = rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0])
        out = np.zeros(n)
        out[start:start + width] = amp * np.sin(np.pi * half_cycles * np.arange(width) / (width - 1))
        return out
    if kind == "square":
        amp = rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0])
        # a partial final period can tip the plateau into the majority, which would
        # make it the most-ink row; redraw until the zero line clearly dominates
        while True:
            period, duty = rng.uniform(0.4, 1.0), rng.uniform(0.25, 0.45)
            phase = (t / period + rng.uniform(0, 1)) % 1.0
            high = phase < duty
            if high.sum() * 1.2 < n - high.sum():
                return np.where(high, amp, 0.0)
    if kind == "ecg":
        return ecg_like(n, fs, rng, scale=rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0], p=[0.2, 0.8]))
    raise ValueError(f"unknown signal kind {kind!r}; expected one of {SIGNAL_KINDS}")


def synthetic_page(layout: LayoutConfig, cal: CalibrationConfig, rng_seed: int,
                   kind: str = "mixed") -> SignalRecord:
    """Twelve leads sized to the layout; `mixed` draws each lead's kind at random."""
    rng = np.random.default_rng(rng_seed)
    leads = {}
    for lead in LEADS:
        n = cal.n_samples(band_of(layout, lead).n_columns)
        k = rng.choice(SIGNAL_KINDS[1:]) if kind == "mixed" else kind
        leads[lead] = synth_signal(str(k), n, cal.sample_rate_hz, rng)
    return SignalRecord(leads, cal.sample_rate_hz, cal.gain_mv_per_pixel)


def crossing_drift(layout: LayoutConfig, cal: CalibrationConfig, rec: SignalRecord,
                   rng_seed: int, n_pairs: int = 2, min_peak_px: int = 20) -> dict[str, Drift]:
    """Dips that carry an upper lead's trough down onto a peak of the lead below.

    For each chosen pair the dip is centred on the lower lead's tallest peak
    and its depth is solved so that the upper trace bottoms out between the
    lower lead's baseline and that peak. The lower lead's peak therefore pokes
    through the upper trace, giving two genuine crossings a few columns apart.
    Pairs whose lower lead never rises `min_peak_px` above its baseline are
    skipped.
    """
    rng = np.random.default_rng(rng_seed)
    fs, p = cal.sample_rate_hz, cal.gain_mv_per_pixel
    pairs = [(g[r], g[r + 1]) for g in (LEADS[:6], LEADS[6:]) for r in (0, 2, 4)]
    drift = {}
    for i in rng.permutation(len(pairs)):
        if len(drift) == n_pairs:
            break
        upper, lower = pairs[i]
        if upper not in rec.leads or lower not in rec.leads:
            continue
        a, b = band_of(layout, upper), band_of(layout, lower)
        base_a, base_b = (a.row_top + a.row_bottom) // 2, (b.row_top + b.row_bottom) // 2
        rows_a = base_a - np.rint(rec.leads[upper] / p)
        rows_b = base_b - np.rint(rec.leads[lower] / p)
        n = rows_b.size
        period = rng.uniform(0.5, 0.9)
        half = int(period * fs / 2)
        if 2 * half + 2 >= n:
            continue
        inner = np.arange(half + 1, n - half - 1)
        k = inner[np.argmin(rows_b[inner])]
        height = base_b - rows_b[k]
        if height < min_peak_px:
            continue
        gap = rng.uniform(0.3, 0.6) * height
        t = np.arange(n) / fs
        onset = (k - half) / fs
        shape = -Drift(1.0, period, onset).offset(t) / p      # rows per mV of depth
        # deepest row of the upper trace grows with depth; bisect for the target
        lo, hi = 0.0, 4.0 * (base_b - base_a + height) * p
        for _ in range(60):
            mid = (lo + hi) / 2
            if np.max(rows_a + mid * shape) <= base_b - gap:
                lo = mid
            else:
                hi = mid
        if not np.any(rows_a + lo * shape >= rows_b):
            continue    # the upper trace's own wiggles kept it clear of the peak
        drift[upper] = Drift(lo, period, onset)
    return drift
