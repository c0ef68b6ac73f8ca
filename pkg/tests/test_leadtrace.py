import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import raster_from

from ecgraph.leadtrace import (CalibrationConfig, EmptyBand, EmptyIntersection, EmptyStartColumn,
                               EndUnreachable, LeadExtractionError, LeadTrace, NoSearchingPoints,
                               PixelSet, Point, detect_baseline, digitize_page, extract_all_leads,
                               extract_crossed_lead, extract_independent_lead, find_end_candidates,
                               find_start_point, representative_rows, select_rows, trace_to_signal)
from ecgraph.raster import BinaryRaster, LeadBand, Region, band_of, binarize
from ecgraph.records import LEADS, SignalRecord
from ecgraph.render import (RenderConfig, crossing_drift, render_record, synth_signal,
                            synthetic_page)


def blank(h, w):
    return BinaryRaster(np.zeros((h, w), bool), Region.full(w, h))


def band(x0, x1, top, bottom):
    return LeadBand("I", x0, x1, top, bottom)


def flat_trace(rows, baseline, x0=0):
    """LeadTrace whose column c holds exactly rows[c]."""
    h = max(max(rows), baseline) + 1
    bits = np.zeros((h, len(rows)), bool)
    bits[rows, np.arange(len(rows))] = True
    return LeadTrace("I", PixelSet(x0, bits), Point(x0, rows[0]), Point(x0 + len(rows) - 1, rows[-1]),
                     baseline)


# -- start point and baseline --------------------------------------------------

def test_start_point_is_topmost():
    bin = blank(100, 10)
    bin.bits[[40, 41, 42], 2] = True
    assert find_start_point(bin, band(2, 9, 0, 99)) == Point(2, 40)


def test_start_point_single_bit():
    bin = blank(100, 10)
    bin.bits[55, 0] = True
    assert find_start_point(bin, band(0, 9, 0, 99)) == Point(0, 55)


def test_start_point_ignores_rows_outside_band():
    bin = blank(100, 10)
    bin.bits[[5, 55], 0] = True
    assert find_start_point(bin, band(0, 9, 20, 99)) == Point(0, 55)


def test_empty_start_column():
    bin = blank(100, 10)
    bin.bits[50, 3] = True
    with pytest.raises(EmptyStartColumn):
        find_start_point(bin, band(0, 9, 0, 99))


def test_end_candidates_topmost_first():
    bin = blank(20, 6)
    bin.bits[[12, 7, 9], 5] = True
    assert [p.y for p in find_end_candidates(bin, band(0, 5, 0, 19))] == [7, 9, 12]


def test_baseline_flat_row():
    bin = blank(120, 30)
    bin.bits[60, :] = True
    assert detect_baseline(bin, band(0, 29, 0, 119)) == 60


def test_baseline_tie_goes_to_row_nearest_center():
    bin = blank(100, 20)
    bin.bits[50, :10] = True
    bin.bits[70, 10:] = True
    assert detect_baseline(bin, band(0, 19, 41, 81)) == 70


def test_baseline_equal_distance_tie_takes_upper_row():
    bin = blank(100, 20)
    bin.bits[50, :10] = True
    bin.bits[70, 10:] = True
    assert detect_baseline(bin, band(0, 19, 40, 80)) == 50


def test_baseline_empty_band():
    with pytest.raises(EmptyBand):
        detect_baseline(blank(50, 10), band(0, 9, 0, 49))


@pytest.mark.parametrize("seed", range(6))
def test_baseline_of_rendered_tone_burst(layout, cal, seed):
    rng = np.random.default_rng(seed)
    leads = {k: synth_signal("sine", cal.n_samples(band_of(layout, k).n_columns), 250.0, rng)
             for k in LEADS}
    res = render_record(SignalRecord(leads, 250.0), RenderConfig(layout, cal, rng_seed=seed))
    bits = binarize(res.image, layout)
    for lead in LEADS:
        assert detect_baseline(bits, band_of(layout, lead)) == res.baselines[lead]


# -- independent extraction ----------------------------------------------------

def test_independent_straight_line():
    bin = raster_from(["......", "######", "......"])
    tr = extract_independent_lead(bin, band(0, 5, 0, 2))
    assert tr.pixels.points() == {(x, 1) for x in range(6)}
    assert tr.end == Point(5, 1) and tr.start == Point(0, 1) and tr.gaps == []


def test_independent_gap_is_unreachable():
    bin = raster_from(["###.##", "......"])
    with pytest.raises(EndUnreachable):
        extract_independent_lead(bin, band(0, 5, 0, 1))


def test_independent_equals_mask_on_rendered_sines(layout, cal):
    rec = synthetic_page(layout, cal, 11, "sine")
    res = render_record(rec, RenderConfig(layout, cal, rng_seed=11))
    bits = binarize(res.image, layout)
    for lead in LEADS:
        tr = extract_independent_lead(bits, band_of(layout, lead))
        assert np.array_equal(tr.pixels.to_page(layout.page_size[0]), res.masks[lead])


# -- crossed extraction --------------------------------------------------------

def test_crossed_disjoint_domains():
    bin = raster_from(["###...",
                       "......",
                       "...###"])
    with pytest.raises(EmptyIntersection):
        extract_crossed_lead(bin, band(0, 5, 0, 2))


def test_crossed_without_baseline_touch():
    bin = raster_from(["......",
                       "######",
                       "......"])
    with pytest.raises(NoSearchingPoints):
        extract_crossed_lead(bin, band(0, 5, 0, 2), baseline_row=2)


def test_crossed_drops_foreign_tail():
    # a foreign stroke leaves the lead at column 2 and ends without reaching x_end
    bin = raster_from(["......",
                       "..#...",
                       "###...",
                       "...###"])
    tr = extract_crossed_lead(bin, band(0, 5, 0, 3))
    assert tr.pixels.points() == {(0, 2), (1, 2), (2, 2), (2, 1), (3, 3), (4, 3), (5, 3)}
    ind = extract_independent_lead(bin, band(0, 5, 0, 3))
    assert tr.pixels.issubset(ind.pixels)


def test_crossed_equals_independent_on_rendered_page(layout, cal):
    res = render_record(synthetic_page(layout, cal, 4), RenderConfig(layout, cal, rng_seed=4))
    bits = binarize(res.image, layout)
    for lead in LEADS:
        b = band_of(layout, lead)
        assert extract_crossed_lead(bits, b).pixels == extract_independent_lead(bits, b).pixels


@pytest.fixture(scope="module")
def crossing_page(layout, cal):
    rec = synthetic_page(layout, cal, 1, "ecg")
    res = render_record(rec, RenderConfig(layout, cal, drift=crossing_drift(layout, cal, rec, 1),
                                          rng_seed=1, allow_crossings=True))
    assert res.intersections()
    return res, binarize(res.image, layout)


def test_crossed_shrink_and_growth(layout, crossing_page):
    res, bits = crossing_page
    for lead in LEADS:
        b = band_of(layout, lead)
        tr = extract_crossed_lead(bits, b, stepwise=True)
        d = tr.diagnostics
        assert d["intersection"] <= min(d["i1"], d["i2"])
        growth = d["growth"]
        assert all(a <= c for a, c in zip(growth, growth[1:]))
        assert growth[-1] == tr.pixels.cardinality
        fast = extract_crossed_lead(bits, b)
        assert fast.pixels == tr.pixels


def test_crossed_trace_covers_own_mask(layout, crossing_page):
    res, bits = crossing_page
    width = layout.page_size[0]
    for lead, tr in extract_all_leads(bits, layout).items():
        own = res.masks[lead]
        assert not np.any(own & ~tr.pixels.to_page(width))


def test_crossed_rows_follow_own_lead(layout, cal, crossing_page):
    res, bits = crossing_page
    traces = extract_all_leads(bits, layout)
    for lead, rows in zip(traces, select_rows(list(traces.values()), cal)):
        assert np.array_equal(rows, res.sample_rows[lead])


@pytest.mark.parametrize("continuity", ["linear", "nearest"])
def test_chosen_rows_are_trace_members(layout, cal, crossing_page, continuity):
    _, bits = crossing_page
    traces = extract_all_leads(bits, layout)
    for tr, rows in zip(traces.values(), select_rows(list(traces.values()), cal, continuity)):
        cols = tr.pixels.x0 + cal.sample_columns(tr.pixels.bits.shape[1])
        assert all((int(c), int(r)) in tr.pixels for c, r in zip(cols, rows))


def test_unknown_continuity_mode(layout, cal, crossing_page):
    _, bits = crossing_page
    traces = list(extract_all_leads(bits, layout).values())
    with pytest.raises(ValueError):
        select_rows(traces, cal, "spline")


def _swap_rerender_identical(layout, cal, rec, res, lead, i, chosen):
    """True when moving sample i of `lead` onto the other lead's row leaves the image unchanged."""
    band = band_of(layout, lead)
    col = band.x_start + int(cal.sample_columns(band.n_columns)[i])
    others = [o for o, m in res.masks.items() if o != lead and m[int(chosen), col]]
    if not others:
        return False
    other = others[0]
    p = cal.gain_mv_per_pixel
    leads = {}
    for name in rec.lead_ids:
        rows = res.sample_rows[name].copy()
        if name == lead:
            rows[i] = chosen
        if name == other:
            rows[i] = res.sample_rows[lead][i]
        leads[name] = (res.baselines[name] - rows) * p
    alt = render_record(SignalRecord(leads, cal.sample_rate_hz, p),
                        RenderConfig(layout, cal, rng_seed=res.cfg.rng_seed, allow_crossings=True))
    return np.array_equal(alt.image.pixels, res.image.pixels)


@pytest.mark.parametrize("seed", range(20))
def test_every_crossing_miss_is_swap_indistinguishable(layout, cal, seed):
    rec = synthetic_page(layout, cal, seed, "ecg")
    res = render_record(rec, RenderConfig(layout, cal, drift=crossing_drift(layout, cal, rec, seed),
                                          rng_seed=seed, allow_crossings=True))
    traces = extract_all_leads(binarize(res.image, layout), layout)
    for lead, rows in zip(traces, select_rows(list(traces.values()), cal)):
        for i in np.flatnonzero(rows != res.sample_rows[lead]):
            assert _swap_rerender_identical(layout, cal, rec, res, lead, int(i), rows[i])


# -- calibration ---------------------------------------------------------------

def test_signal_at_baseline_is_zero():
    sig = trace_to_signal(flat_trace([30] * 9, 30), CalibrationConfig(0.01, 250.0, 1.0))
    assert np.array_equal(sig, np.zeros(9))


def test_signal_above_baseline_is_positive():
    sig = trace_to_signal(flat_trace([10] * 9, 30), CalibrationConfig(0.01, 250.0, 1.0))
    assert np.allclose(sig, 0.20, atol=1e-12)


def test_strict_absolute_drops_polarity():
    tr = flat_trace([10, 50, 30], 30)
    cal = CalibrationConfig(0.01, 250.0, 1.0)
    assert np.allclose(trace_to_signal(tr, cal), [0.2, -0.2, 0.0])
    assert np.allclose(trace_to_signal(tr, cal, strict_absolute=True), [0.2, 0.2, 0.0])


def test_gap_columns_are_interpolated():
    tr = flat_trace([10, 10, 10, 10, 20], 10)
    tr.pixels.bits[:, 1:4] = False
    sig = trace_to_signal(tr, CalibrationConfig(1.0, 250.0, 1.0))
    assert np.allclose(sig, [0, -2.5, -5, -7.5, -10])


def test_downsampling_takes_sample_columns():
    tr = flat_trace([5, 6, 7, 8, 9, 10, 11], 5)
    rows = representative_rows(tr, CalibrationConfig(1.0, 250.0, 2.0))
    assert rows.tolist() == [5, 7, 9, 11]


def test_vertical_run_follows_continuity():
    bits = np.zeros((12, 4), bool)
    bits[2, 0] = bits[3, 1] = True
    bits[2:11, 2] = True
    bits[4, 3] = True
    tr = LeadTrace("I", PixelSet(0, bits), Point(0, 2), Point(3, 4), 2)
    rows = representative_rows(tr, CalibrationConfig(1.0, 250.0, 1.0))
    assert rows[2] == 4


@given(st.lists(st.integers(0, 40), min_size=2, max_size=30), st.integers(0, 40),
       st.floats(0.001, 1.0), st.integers(1, 50))
def test_calibration_scales_linearly(rows, baseline, p, k):
    tr = flat_trace(rows, baseline)
    a = trace_to_signal(tr, CalibrationConfig(p, 250.0, 1.0))
    b = trace_to_signal(tr, CalibrationConfig(p * k, 250.0, 1.0))
    assert np.allclose(b, k * a, rtol=1e-12, atol=0)


# -- page pipeline -------------------------------------------------------------

def test_zero_page_digitizes_to_zeros(layout, cal):
    rec = synthetic_page(layout, cal, 0, "zeros")
    res = render_record(rec, RenderConfig(layout, cal))
    out = digitize_page(res.image, layout, cal)
    assert out.lead_ids == list(LEADS)
    assert all(np.array_equal(v, np.zeros_like(v)) for v in out.leads.values())


def test_sine_page_with_crossings_within_two_quanta(layout, cal):
    rec = synthetic_page(layout, cal, 1, "sine")
    drift = crossing_drift(layout, cal, rec, 1)
    res = render_record(rec, RenderConfig(layout, cal, drift=drift, rng_seed=1, allow_crossings=True))
    assert res.intersections()
    out, truth = digitize_page(res.image, layout, cal), res.truth()
    for lead in LEADS:
        assert np.abs(out.leads[lead] - truth.leads[lead]).max() <= 2 * cal.gain_mv_per_pixel + 1e-12


def test_blank_band_names_the_lead(layout, cal):
    rec = synthetic_page(layout, cal, 2)
    res = render_record(rec, RenderConfig(layout, cal, rng_seed=2))
    b = band_of(layout, "aVF")
    res.image.pixels[b.row_top:b.row_bottom + 1, b.x_start:b.x_end + 1] = 255
    with pytest.raises(LeadExtractionError) as info:
        digitize_page(res.image, layout, cal)
    assert info.value.lead_id == "aVF"
    assert "aVF" in str(info.value)


@pytest.mark.parametrize("seed", [5, 17])
def test_round_trip_within_two_quanta(layout, cal, seed):
    res = render_record(synthetic_page(layout, cal, seed, "ecg"), RenderConfig(layout, cal, rng_seed=seed))
    out, truth = digitize_page(res.image, layout, cal), res.truth()
    for lead in LEADS:
        assert np.abs(out.leads[lead] - truth.leads[lead]).max() <= 2 * cal.gain_mv_per_pixel + 1e-12
