"""Per-lead trace extraction and pixel-to-millivolt conversion.

Independent leads are the forward connectivity domain of their start point.
Crossed leads use the bi-directional method: intersect the forward domain of
the start with the backward domain of the end, then regrow from the points
that lie on the baseline row, restricted to that intersection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .connectivity import BACKWARD, FORWARD, RunGraph, check_direction
from .errors import EcgraphError
from .raster import BinaryRaster, LayoutConfig, LeadBand, RasterImage, binarize
from .records import SignalRecord

log = logging.getLogger(__name__)


class TraceError(EcgraphError):
    pass


class EmptyStartColumn(TraceError):
    pass


class EmptyBand(TraceError):
    pass


class SeedNotInk(TraceError, ValueError):
    pass


class EndUnreachable(TraceError):
    pass


class EmptyIntersection(TraceError):
    pass


class NoSearchingPoints(TraceError):
    pass


class EmptyTrace(TraceError):
    pass


class LeadExtractionError(TraceError):
    def __init__(self, lead_id: str, cause: Exception):
        super().__init__(f"lead {lead_id}: {type(cause).__name__}: {cause}")
        self.lead_id = lead_id
        self.cause = cause


@dataclass(frozen=True)
class Point:
    x: int
    y: int


@dataclass
class PixelSet:
    """Membership bitmap over a column window; bits[y, x - x0]."""

    x0: int
    bits: np.ndarray

    @property
    def cardinality(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def x1(self) -> int:
        return self.x0 + self.bits.shape[1] - 1

    def __contains__(self, xy) -> bool:
        x, y = xy
        c = x - self.x0
        return 0 <= c < self.bits.shape[1] and 0 <= y < self.bits.shape[0] and bool(self.bits[y, c])

    def __len__(self) -> int:
        return self.cardinality

    def points(self) -> set[tuple[int, int]]:
        ys, cs = np.nonzero(self.bits)
        return {(int(c) + self.x0, int(y)) for y, c in zip(ys, cs)}

    def column(self, x: int) -> np.ndarray:
        """Member rows of page column x, ascending."""
        return np.flatnonzero(self.bits[:, x - self.x0])

    def to_page(self, width: int) -> np.ndarray:
        out = np.zeros((self.bits.shape[0], width), dtype=bool)
        out[:, self.x0:self.x1 + 1] = self.bits
        return out

    def __and__(self, other: "PixelSet") -> "PixelSet":
        self._same_window(other)
        return PixelSet(self.x0, self.bits & other.bits)

    def __or__(self, other: "PixelSet") -> "PixelSet":
        self._same_window(other)
        return PixelSet(self.x0, self.bits | other.bits)

    def issubset(self, other: "PixelSet") -> bool:
        self._same_window(other)
        return not np.any(self.bits & ~other.bits)

    def _same_window(self, other):
        if self.x0 != other.x0 or self.bits.shape != other.bits.shape:
            raise ValueError("pixel sets cover different windows")

    def __eq__(self, other) -> bool:
        return (isinstance(other, PixelSet) and self.x0 == other.x0
                and self.bits.shape == other.bits.shape and np.array_equal(self.bits, other.bits))


@dataclass
class LeadTrace:
    lead_id: str
    pixels: PixelSet
    start: Point
    end: Point
    baseline_row: int
    gaps: list[int] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CalibrationConfig:
    gain_mv_per_pixel: float = 0.02
    sample_rate_hz: float = 250.0
    pixels_per_sample: float = 2.0

    def __post_init__(self):
        for name in ("gain_mv_per_pixel", "sample_rate_hz", "pixels_per_sample"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def n_samples(self, n_columns: int) -> int:
        return int(np.floor((n_columns - 1) / self.pixels_per_sample + 1e-9)) + 1

    def sample_columns(self, n_columns: int) -> np.ndarray:
        k = np.arange(self.n_samples(n_columns))
        return np.minimum(np.rint(k * self.pixels_per_sample).astype(int), n_columns - 1)


# -- primitives --------------------------------------------------------------

def _window(bin: BinaryRaster, band: LeadBand) -> np.ndarray:
    return bin.bits[:, band.x_start:band.x_end + 1]


def find_start_point(bin: BinaryRaster, band: LeadBand) -> Point:
    """Topmost ink pixel on column x_start within the band's rows."""
    col = bin.bits[band.row_top:band.row_bottom + 1, band.x_start]
    hits = np.flatnonzero(col)
    if hits.size == 0:
        raise EmptyStartColumn(f"no ink on column {band.x_start} between rows "
                               f"{band.row_top} and {band.row_bottom}")
    return Point(band.x_start, band.row_top + int(hits[0]))


def find_end_candidates(bin: BinaryRaster, band: LeadBand) -> list[Point]:
    col = bin.bits[band.row_top:band.row_bottom + 1, band.x_end]
    return [Point(band.x_end, band.row_top + int(r)) for r in np.flatnonzero(col)]


def detect_baseline(bin: BinaryRaster, band: LeadBand) -> int:
    """Row of the band that holds the most ink between x_start and x_end.

    Ties go to the row nearest the band's vertical centre, then to the upper row.
    """
    sub = bin.bits[band.row_top:band.row_bottom + 1, band.x_start:band.x_end + 1]
    counts = np.count_nonzero(sub, axis=1)
    if counts.max(initial=0) == 0:
        raise EmptyBand(f"band {band.lead_id} holds no ink")
    best = np.flatnonzero(counts == counts.max()) + band.row_top
    dist = np.abs(best - band.center_row)
    return int(best[np.flatnonzero(dist == dist.min())[0]])


def connected_domain(bin: BinaryRaster, seed: Point, direction: str = FORWARD,
                     mask: PixelSet | None = None,
                     window: tuple[int, int] | None = None) -> PixelSet:
    """Closure of `seed` under the 5-step forward or backward neighbourhood.

    Only ink pixels (and, with `mask`, only mask members) are admitted. The
    result covers the mask's window when a mask is given, else `window`, else
    the whole raster.
    """
    forward = check_direction(direction)
    if mask is not None:
        x0, x1 = mask.x0, mask.x1
    elif window is not None:
        x0, x1 = window
    else:
        x0, x1 = 0, bin.width - 1
    ink = bin.bits[:, x0:x1 + 1]
    if mask is not None:
        ink = ink & mask.bits
    sx = seed.x - x0
    if not (0 <= sx < ink.shape[1] and 0 <= seed.y < ink.shape[0] and ink[seed.y, sx]):
        raise SeedNotInk(f"seed {seed} is not an admissible ink pixel")
    return PixelSet(x0, RunGraph(ink).closure([(sx, seed.y)], forward))


def _column_gaps(pixels: PixelSet) -> list[int]:
    empty = ~pixels.bits.any(axis=0)
    return [int(c) + pixels.x0 for c in np.flatnonzero(empty)]


# -- extraction ----------------------------------------------------------------

def extract_independent_lead(bin: BinaryRaster, band: LeadBand,
                             graph: RunGraph | None = None) -> LeadTrace:
    start = find_start_point(bin, band)
    graph = graph or RunGraph(_window(bin, band))
    bits = graph.closure([(0, start.y)], forward=True)
    ends = np.flatnonzero(bits[band.row_top:band.row_bottom + 1, -1])
    if ends.size == 0:
        ends = np.flatnonzero(bits[:, -1])
        if ends.size == 0:
            raise EndUnreachable(f"trace from {start} never reaches column {band.x_end}")
        end = Point(band.x_end, int(ends[0]))
    else:
        end = Point(band.x_end, band.row_top + int(ends[0]))
    pixels = PixelSet(band.x_start, bits)
    return LeadTrace(band.lead_id, pixels, start, end, detect_baseline(bin, band),
                     _column_gaps(pixels), {"method": "independent"})


def extract_crossed_lead(bin: BinaryRaster, band: LeadBand, graph: RunGraph | None = None,
                         baseline_row: int | None = None, stepwise: bool = False) -> LeadTrace:
    """Bi-directional connectivity extraction.

    `baseline_row` overrides detection. With `stepwise`, the regrowth runs
    one searching point at a time and records the accumulated size after
    each, which is slow but exposes the growth sequence in diagnostics.
    """
    start = find_start_point(bin, band)
    ends = find_end_candidates(bin, band)
    if not ends:
        raise EndUnreachable(f"no ink on end column {band.x_end} within band rows")
    end = ends[0]
    b = detect_baseline(bin, band) if baseline_row is None else int(baseline_row)

    graph = graph or RunGraph(_window(bin, band))
    last = band.x_end - band.x_start
    i1 = graph.closure([(0, start.y)], forward=True)
    i2 = graph.closure([(last, end.y)], forward=False)
    domain = i1 & i2
    if not domain.any():
        raise EmptyIntersection(f"forward domain of {start} and backward domain of {end} are disjoint")

    search_cols = np.flatnonzero(domain[b]) if 0 <= b < domain.shape[0] else np.empty(0, int)
    if search_cols.size == 0:
        raise NoSearchingPoints(f"the trace never touches baseline row {b}")
    seeds = [(int(c), b) for c in search_cols]

    inner = RunGraph(domain)
    growth = []
    if stepwise:
        acc = np.zeros_like(domain)
        for s in seeds:
            acc |= inner.closure([s], forward=True) | inner.closure([s], forward=False)
            growth.append(int(np.count_nonzero(acc)))
        bits = acc
    else:
        # closure distributes over union, so all searching points go in one pass
        bits = inner.closure(seeds, forward=True) | inner.closure(seeds, forward=False)

    pixels = PixelSet(band.x_start, bits)
    diag = {
        "method": "crossed",
        "i1": int(np.count_nonzero(i1)),
        "i2": int(np.count_nonzero(i2)),
        "intersection": int(np.count_nonzero(domain)),
        "searching_points": len(seeds),
        "end_candidates": len(ends),
    }
    if len(ends) > 1:
        diag["multi_candidate_end"] = [p.y for p in ends]
    if stepwise:
        diag["growth"] = growth
    return LeadTrace(band.lead_id, pixels, start, end, b, _column_gaps(pixels), diag)


# -- calibration --------------------------------------------------------------

CONTINUITY_MODES = ("linear", "nearest")


def _extend(pa: float, ya: float, pb: float, yb: float, pc: float) -> float:
    """Row at position pc on the straight line through (pa, ya) and (pb, yb)."""
    return yb + (yb - ya) * (pc - pb) / (pb - pa)


def _path_costs(bits: np.ndarray, k: int, members: np.ndarray, anchors, horizon: int) -> np.ndarray:
    """Per member: least summed squared deviation from straight-line
    extension over column k and the next `horizon` sample columns."""
    (p2, y2), (p1, y1) = anchors[-2], anchors[-1]
    ahead = []
    for j in range(k + 1, min(k + 1 + horizon, bits.shape[1])):
        col = np.flatnonzero(bits[:, j])
        if col.size == 0:
            break
        ahead.append(col)
    costs = np.empty(members.size)
    for i, y in enumerate(members):
        # frontier: (previous row, current row) -> cheapest path cost so far
        prev_pos = p1
        frontier = {(y1, int(y)): (y - _extend(p2, y2, p1, y1, k)) ** 2}
        for step, col in enumerate(ahead):
            pos = k + step
            nxt: dict = {}
            for (py, cy), c in frontier.items():
                for m in col:
                    cost = c + (m - _extend(prev_pos, py, pos, cy, pos + 1)) ** 2
                    if cost < nxt.get((cy, int(m)), np.inf):
                        nxt[(cy, int(m))] = cost
            frontier, prev_pos = nxt, pos
        costs[i] = min(frontier.values())
    return costs


def _member_scores(bits: np.ndarray, k: int, anchors: list[tuple[int, float]],
                   continuity: str) -> tuple[np.ndarray, np.ndarray]:
    """Candidate rows of sample column k and their sort keys (lower is better).

    "nearest" ranks members by distance to the latest anchor. "linear" ranks
    them by how far the path strays from straight-line extension at this
    column plus the best it can do at the next one; a two-column look-ahead
    and then the distance to the latest anchor only break exact ties, since
    longer look-ahead favours whichever neighbouring trace is smoother. The
    last key is the row itself, so the upper member wins a full tie.
    """
    members = np.flatnonzero(bits[:, k])
    y1 = anchors[-1][1]
    near = np.abs(members - y1).astype(float)
    if continuity == "nearest" or len(anchors) < 2:
        zero = np.zeros(members.size)
        return members, np.stack([near, zero, zero, members], axis=1)
    short = _path_costs(bits, k, members, anchors, 1)
    longer = _path_costs(bits, k, members, anchors, 2)
    return members, np.stack([short, longer, near, members], axis=1)


def select_rows(traces: list[LeadTrace], cal: CalibrationConfig,
                continuity: str = "linear") -> list[np.ndarray]:
    """Representative row per output sample for each trace (NaN where empty).

    Sample columns with a single member take it. Where a column holds several
    members, the first sample takes the start point and later samples follow
    the continuity rule of `_member_scores`. Traces that cover the same page
    columns are resolved together: at a shared sample column each trace
    avoids rows already claimed by another trace when it has an alternative,
    since every lead contributes its own pixel to a sample column. Among the
    assignments with fewest shared rows the summed scores decide.
    """
    if continuity not in CONTINUITY_MODES:
        raise ValueError(f"continuity must be one of {CONTINUITY_MODES}, got {continuity!r}")
    state = []
    for t in traces:
        bits = t.pixels.bits[:, cal.sample_columns(t.pixels.bits.shape[1])]
        count = np.count_nonzero(bits, axis=0)
        rows = np.where(count > 0, np.argmax(bits, axis=0), 0).astype(float)
        rows[count == 0] = np.nan
        state.append((bits, count, rows, count == 1))

    groups: dict[tuple[int, int, int], list[int]] = {}
    for i, t in enumerate(traces):
        groups.setdefault((t.pixels.x0, *t.pixels.bits.shape), []).append(i)

    for idx in groups.values():
        todo = sorted({int(k) for i in idx for k in np.flatnonzero(state[i][1] > 1)})
        for k in todo:
            options = {}
            for i in idx:
                bits, count, rows, chosen = state[i]
                if count[k] <= 1:
                    continue
                left = np.flatnonzero(chosen[:k])[-2:]
                if left.size == 0:
                    members = np.flatnonzero(bits[:, k])
                    y0 = traces[i].start.y if (k == 0 and traces[i].start.y in members) else members[0]
                    options[i] = (np.array([y0]), np.zeros((1, 4)))
                else:
                    options[i] = _member_scores(bits, k, [(int(j), rows[j]) for j in left],
                                                continuity)
            fixed = [state[i][2][k] for i in idx if state[i][1][k] == 1]
            for i, y in _assign(options, fixed).items():
                state[i][2][k] = y
                state[i][3][k] = True
    return [s[2] for s in state]


def _assign(options: dict, fixed: list[float]) -> dict[int, int]:
    """Pick one member per trace, fewest rows shared first, then summed scores."""
    leads = list(options)
    # traces whose candidate rows overlap are decided together
    clusters: list[list[int]] = []
    for i in leads:
        rows_i = set(options[i][0].tolist())
        hit = [c for c in clusters if any(rows_i & set(options[j][0].tolist()) for j in c)]
        merged = [i] + [j for c in hit for j in c]
        clusters = [c for c in clusters if c not in hit] + [merged]
    taken = set(int(y) for y in fixed)
    out = {}
    for cluster in clusters:
        sizes = [options[i][0].size for i in cluster]
        if len(cluster) == 1 or int(np.prod(sizes)) > 4096:
            for i in cluster:
                members, keys = options[i]
                clash = np.array([m in taken for m in members], dtype=float)
                order = np.lexsort(tuple(keys[:, c] for c in range(3, -1, -1)) + (clash,))
                out[i] = int(members[order[0]])
            continue
        best, best_key = None, None
        for combo in np.ndindex(*sizes):
            picks = [int(options[i][0][c]) for i, c in zip(cluster, combo)]
            shared = len(picks) - len(set(picks)) + sum(p in taken for p in picks)
            total = np.sum([options[i][1][c] for i, c in zip(cluster, combo)], axis=0)
            key = (shared, *total.tolist())
            if best_key is None or key < best_key:
                best, best_key = picks, key
        out.update(zip(cluster, best))
    return out


def representative_rows(trace: LeadTrace, cal: CalibrationConfig,
                        continuity: str = "linear") -> np.ndarray:
    """One trace row per output sample (NaN where the sample column is empty)."""
    return select_rows([trace], cal, continuity)[0]


def trace_to_signal(trace: LeadTrace, cal: CalibrationConfig, strict_absolute: bool = False,
                    continuity: str = "linear", rows: np.ndarray | None = None) -> np.ndarray:
    """Millivolt samples; upward deflection is positive unless `strict_absolute`.

    `rows` may carry representative rows chosen jointly with other leads.
    """
    if trace.pixels.cardinality == 0:
        raise EmptyTrace(f"lead {trace.lead_id}: empty trace")
    rows = representative_rows(trace, cal, continuity) if rows is None else np.asarray(rows, float)
    ok = ~np.isnan(rows)
    if not ok.any():
        raise EmptyTrace(f"lead {trace.lead_id}: no sample column holds a trace pixel")
    if not ok.all():
        k = np.arange(rows.size)
        rows = np.interp(k, k[ok], rows[ok])
    offset = trace.baseline_row - rows
    if strict_absolute:
        offset = np.abs(offset)
    return offset * cal.gain_mv_per_pixel


# -- page pipeline ------------------------------------------------------------

def extract_all_leads(bin: BinaryRaster, layout: LayoutConfig, method: str = "crossed",
                      lead_ids=None) -> dict[str, LeadTrace]:
    """Extract every band; failures surface as LeadExtractionError."""
    if method not in ("crossed", "independent"):
        raise ValueError(f"method must be 'crossed' or 'independent', got {method!r}")
    graphs: dict[tuple[int, int], RunGraph] = {}
    out = {}
    for band in layout.bands:
        if lead_ids is not None and band.lead_id not in lead_ids:
            continue
        key = (band.x_start, band.x_end)
        if key not in graphs:
            graphs[key] = RunGraph(_window(bin, band))
        try:
            if method == "crossed":
                out[band.lead_id] = extract_crossed_lead(bin, band, graphs[key])
            else:
                out[band.lead_id] = extract_independent_lead(bin, band, graphs[key])
        except TraceError as exc:
            raise LeadExtractionError(band.lead_id, exc) from exc
    return out


def digitize_page(img: RasterImage, layout: LayoutConfig, cal: CalibrationConfig,
                  method: str = "crossed", strict_absolute: bool = False,
                  continuity: str = "linear", source_image: str | None = None) -> SignalRecord:
    bin = binarize(img, layout)
    traces = extract_all_leads(bin, layout, method)
    leads, gaps = {}, {}
    rows = dict(zip(traces, select_rows(list(traces.values()), cal, continuity)))
    for lead_id, trace in traces.items():
        try:
            leads[lead_id] = trace_to_signal(trace, cal, strict_absolute, continuity, rows[lead_id])
        except TraceError as exc:
            raise LeadExtractionError(lead_id, exc) from exc
        if trace.gaps:
            gaps[lead_id] = trace.gaps
    n = min(v.size for v in leads.values())
    if any(v.size != n for v in leads.values()):
        log.warning("bands have unequal widths; truncating every lead to %d samples", n)
        leads = {k: v[:n] for k, v in leads.items()}
    return SignalRecord(leads, cal.sample_rate_hz, cal.gain_mv_per_pixel, source_image, gaps)
