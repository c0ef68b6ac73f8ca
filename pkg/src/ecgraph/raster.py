"""Chart images: loading, grid removal / binarization, and the page layout.

Pixel coordinates are 0-based with y growing downward. Regions and bands are
inclusive on both ends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import EcgraphError
from .records import LEADS, atomic_write


class RasterError(EcgraphError):
    pass


class DecodeError(RasterError):
    pass


class RegionOutOfBounds(RasterError, ValueError):
    pass


class UnknownLead(RasterError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown lead"


class LayoutError(RasterError, ValueError):
    pass


@dataclass
class RasterImage:
    """An 8-bit RGB image; `pixels` has shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] == 0 or px.shape[1] == 0:
            raise RasterError(f"expected a non-empty (H, W, 3) array, got {px.shape}")
        self.pixels = px.astype(np.uint8, copy=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def blank(cls, width: int, height: int, color=(255, 255, 255)) -> "RasterImage":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[...] = color
        return cls(px)


@dataclass(frozen=True)
class Region:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise RegionOutOfBounds(f"degenerate region {self}")

    def inside(self, width: int, height: int) -> bool:
        return 0 <= self.x1 and 0 <= self.y1 and self.x2 < width and self.y2 < height

    @classmethod
    def full(cls, width: int, height: int) -> "Region":
        return cls(0, 0, width - 1, height - 1)


@dataclass
class BinaryRaster:
    """Ink plane: bits[y, x] is True where the pixel belongs to a waveform."""

    bits: np.ndarray
    roi: Region

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def __getitem__(self, xy) -> bool:
        x, y = xy
        return bool(self.bits[y, x])


@dataclass(frozen=True)
class LeadBand:
    lead_id: str
    x_start: int
    x_end: int
    row_top: int
    row_bottom: int

    def __post_init__(self):
        if self.lead_id not in LEADS:
            raise UnknownLead(f"unknown lead id {self.lead_id!r}")
        if not self.x_start < self.x_end:
            raise LayoutError(f"band {self.lead_id}: x_start must be < x_end")
        if not self.row_top < self.row_bottom:
            raise LayoutError(f"band {self.lead_id}: row_top must be < row_bottom")

    @property
    def center_row(self) -> float:
        return (self.row_top + self.row_bottom) / 2

    @property
    def n_columns(self) -> int:
        return self.x_end - self.x_start + 1


@dataclass
class LayoutConfig:
    bands: list[LeadBand]
    grid_color: tuple[int, int, int] = (255, 170, 170)
    ink_luminance_threshold: int = 128
    grid_tolerance: int = 60
    roi: Region | None = None
    page_size: tuple[int, int] | None = None
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.bands) != 12:
            raise LayoutError(f"layout needs exactly 12 bands, got {len(self.bands)}")
        ids = [b.lead_id for b in self.bands]
        if len(set(ids)) != 12:
            raise LayoutError(f"duplicate lead ids in layout: {ids}")
        if not 0 <= self.ink_luminance_threshold <= 255:
            raise LayoutError("ink_luminance_threshold must lie in 0..255")
        if self.page_size is not None:
            w, h = self.page_size
            for b in self.bands:
                if not Region(b.x_start, b.row_top, b.x_end, b.row_bottom).inside(w, h):
                    raise LayoutError(f"band {b.lead_id} lies outside the {w}x{h} page")
        self._by_id = {b.lead_id: b for b in self.bands}

    def default_roi(self) -> Region:
        if self.roi is not None:
            return self.roi
        if self.page_size is not None:
            return Region.full(*self.page_size)
        return Region(min(b.x_start for b in self.bands), min(b.row_top for b in self.bands),
                      max(b.x_end for b in self.bands), max(b.row_bottom for b in self.bands))


def band_of(cfg: LayoutConfig, lead_id: str) -> LeadBand:
    try:
        return cfg._by_id[lead_id]
    except KeyError:
        raise UnknownLead(f"unknown lead id {lead_id!r}") from None


def standard_layout(n_samples: int = 625, pixels_per_sample: int = 2, band_height: int = 120,
                    margin: int = 20, group_gap: int = 40, **kwargs) -> LayoutConfig:
    """The 6x2 page: limb leads in the left column group, chest leads on the right."""
    width = (n_samples - 1) * pixels_per_sample + 1
    bands = []
    for group, leads in enumerate((LEADS[:6], LEADS[6:])):
        x0 = margin + group * (width + group_gap)
        for row, lead in enumerate(leads):
            top = margin + row * band_height
            bands.append(LeadBand(lead, x0, x0 + width - 1, top, top + band_height - 1))
    page = (2 * margin + 2 * width + group_gap, 2 * margin + 6 * band_height)
    return LayoutConfig(bands, page_size=page, **kwargs)


# -- images -----------------------------------------------------------------

def load_image(path) -> RasterImage:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        with Image.open(path) as im:
            im.load()
            rgb = im.convert("RGB")
            arr = np.array(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    return RasterImage(arr)


def image_bytes(img: RasterImage | np.ndarray, fmt: str = "PNG") -> bytes:
    import io
    arr = img.pixels if isinstance(img, RasterImage) else img
    if arr.dtype == bool:
        arr = np.where(arr, 255, 0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format=fmt)
    return buf.getvalue()


def save_image(img: RasterImage | np.ndarray, path) -> Path:
    """Save an RGB image or a boolean mask (white = True) as PNG or BMP."""
    path = Path(path)
    fmt = "BMP" if path.suffix.lower() == ".bmp" else "PNG"
    atomic_write(path, image_bytes(img, fmt))
    return path


# -- binarization -----------------------------------------------------------

def luminance(img: RasterImage) -> np.ndarray:
    """Integer mean of the three channels."""
    px = img.pixels
    return (px[..., 0].astype(np.uint16) + px[..., 1] + px[..., 2]) // 3


def grid_mask(img: RasterImage, grid_color, tolerance: int = 60) -> np.ndarray:
    """True where every channel lies within `tolerance` of `grid_color`."""
    px = img.pixels
    out = np.ones(px.shape[:2], dtype=bool)
    for ch, ref in enumerate(grid_color):
        lo, hi = int(ref) - tolerance, int(ref) + tolerance
        c = px[..., ch]
        if lo > 0:
            out &= c >= lo
        if hi < 255:
            out &= c <= hi
    return out


def binarize(img: RasterImage, cfg: LayoutConfig, roi: Region | None = None) -> BinaryRaster:
    """Ink = dark, not grid-colored, and inside `roi`."""
    roi = roi or cfg.default_roi()
    if not roi.inside(img.width, img.height):
        raise RegionOutOfBounds(f"{roi} exceeds the {img.width}x{img.height} image")
    bits = luminance(img) <= cfg.ink_luminance_threshold
    bits &= ~grid_mask(img, cfg.grid_color, cfg.grid_tolerance)
    inside = np.zeros_like(bits)
    inside[roi.y1:roi.y2 + 1, roi.x1:roi.x2 + 1] = True
    bits &= inside
    return BinaryRaster(bits, roi)


# -- layout config text format ----------------------------------------------

def format_layout(cfg: LayoutConfig) -> str:
    lines = ["# ecgraph layout", ""]
    lines.append("grid_color = " + ",".join(str(c) for c in cfg.grid_color))
    lines.append(f"ink_luminance_threshold = {cfg.ink_luminance_threshold}")
    lines.append(f"grid_tolerance = {cfg.grid_tolerance}")
    if cfg.page_size is not None:
        lines.append(f"page = {cfg.page_size[0]},{cfg.page_size[1]}")
    if cfg.roi is not None:
        r = cfg.roi
        lines.append(f"roi = {r.x1},{r.y1},{r.x2},{r.y2}")
    lines += ["", "[bands]", "# lead  x_start  x_end  row_top  row_bottom"]
    for b in cfg.bands:
        lines.append(f"{b.lead_id:<6} {b.x_start:>7} {b.x_end:>6} {b.row_top:>8} {b.row_bottom:>11}")
    return "\n".join(lines) + "\n"


def _ints(value: str, n: int, key: str, lineno: int) -> tuple[int, ...]:
    parts = [p.strip() for p in value.split(",")]
    try:
        out = tuple(int(p) for p in parts)
    except ValueError:
        raise LayoutError(f"line {lineno}: {key} expects {n} integers, got {value!r}") from None
    if len(out) != n:
        raise LayoutError(f"line {lineno}: {key} expects {n} integers, got {len(out)}")
    return out


def parse_layout(text: str) -> LayoutConfig:
    kv: dict = {}
    bands = []
    in_bands = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() == "[bands]":
            in_bands = True
            continue
        if in_bands:
            cols = line.split()
            if len(cols) != 5:
                raise LayoutError(f"line {lineno}: band rows need 5 fields, got {len(cols)}")
            try:
                nums = [int(c) for c in cols[1:]]
            except ValueError:
                raise LayoutError(f"line {lineno}: band coordinates must be integers") from None
            try:
                bands.append(LeadBand(cols[0], *nums))
            except UnknownLead as exc:
                raise LayoutError(f"line {lineno}: {exc}") from None
            continue
        if "=" not in line:
            raise LayoutError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "grid_color":
            kv[key] = _ints(value, 3, key, lineno)
        elif key in ("ink_luminance_threshold", "grid_tolerance"):
            kv[key] = _ints(value, 1, key, lineno)[0]
        elif key == "page":
            kv["page_size"] = _ints(value, 2, key, lineno)
        elif key == "roi":
            kv[key] = Region(*_ints(value, 4, key, lineno))
        else:
            raise LayoutError(f"line {lineno}: unknown key {key!r}")
    return LayoutConfig(bands, **kv)


def load_layout(path) -> LayoutConfig:
    return parse_layout(Path(path).read_text())
