"""Render a synthetic 12-lead page, digitize it back and measure the error.

Run with ``python3 demos/digitize_round_trip.py [seed] [outdir]``.  The page,
an overlay of the extracted samples and the recovered CSV are written to
``outdir`` (default ``demo_out/round_trip``).
"""
import sys
from pathlib import Path

import numpy as np

from ecgraph.cli import overlay_image
from ecgraph.leadtrace import CalibrationConfig, digitize_page
from ecgraph.raster import save_image, standard_layout
from ecgraph.records import LEADS, write_signal
from ecgraph.render import RenderConfig, render_record, synthetic_page

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out/round_trip")
out.mkdir(parents=True, exist_ok=True)

layout = standard_layout()
cal = CalibrationConfig(gain_mv_per_pixel=0.02, sample_rate_hz=250.0, pixels_per_sample=2)

# %% draw a page with known ground truth
truth = synthetic_page(layout, cal, seed, kind="ecg")
page = render_record(truth, RenderConfig(layout, cal, rng_seed=seed))
save_image(page.image, out / "page.png")
print(f"page {page.image.width}x{page.image.height}, {truth.length_samples} samples per lead")

# %% digitize and compare per lead, in pixels
rec = digitize_page(page.image, layout, cal)
write_signal(rec, out / "page.csv")
save_image(overlay_image(page.image, rec, layout, cal), out / "page.overlay.png")

print(f"{'lead':>5} {'max |err| px':>13} {'mean |err| px':>14}")
for lead in LEADS:
    expected = (page.baselines[lead] - page.sample_rows[lead]) * cal.gain_mv_per_pixel
    err = np.abs(rec.leads[lead] - expected) / cal.gain_mv_per_pixel
    print(f"{lead:>5} {err.max():13.2f} {err.mean():14.3f}")
print(f"wrote {out}/page.png, page.overlay.png, page.csv")
