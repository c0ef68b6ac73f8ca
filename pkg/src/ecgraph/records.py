"""Multi-lead signal container and its CSV / JSON on-disk format.

The CSV holds one column per lead (header row of lead ids) and one row per
sample, millivolts with six decimals, '.' as decimal separator and '\\n' line
endings. The JSON sidecar carries everything that is not a sample value.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EcgraphError

LEADS = ("I", "II", "III", "aVR", "aVL", "aVF",
         "V1", "V2", "V3", "V4", "V5", "V6")


class RecordError(EcgraphError, ValueError):
    pass


@dataclass
class SignalRecord:
    """Numeric signal for one or more leads sharing a sample grid."""

    leads: dict[str, np.ndarray]
    sample_rate_hz: float
    gain_mv_per_pixel: float | None = None
    source_image: str | None = None
    gaps: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.leads:
            raise RecordError("a SignalRecord needs at least one lead")
        lengths = set()
        clean = {}
        for name, values in self.leads.items():
            arr = np.asarray(values, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise RecordError(f"lead {name}: non-finite samples")
            lengths.add(arr.size)
            clean[name] = arr
        if len(lengths) != 1:
            raise RecordError(f"lead lengths differ: {sorted(lengths)}")
        if not self.sample_rate_hz > 0:
            raise RecordError("sample_rate_hz must be positive")
        self.leads = clean

    @property
    def length_samples(self) -> int:
        return next(iter(self.leads.values())).size

    @property
    def lead_ids(self) -> list[str]:
        return list(self.leads)

    def as_array(self, order=None) -> np.ndarray:
        """Stack leads into a (length, n_leads) array."""
        order = list(order) if order is not None else self.lead_ids
        return np.stack([self.leads[k] for k in order], axis=1)

    def with_leads(self, leads: dict[str, np.ndarray]) -> "SignalRecord":
        return SignalRecord(leads, self.sample_rate_hz, self.gain_mv_per_pixel,
                            self.source_image, {})


def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def signal_to_csv(rec: SignalRecord) -> str:
    buf = io.StringIO()
    buf.write(",".join(rec.lead_ids) + "\n")
    cols = [rec.leads[k] for k in rec.lead_ids]
    for i in range(rec.length_samples):
        buf.write(",".join(_fmt(c[i]) for c in cols) + "\n")
    return buf.getvalue()


def signal_sidecar(rec: SignalRecord) -> dict:
    return {
        "sample_rate_hz": rec.sample_rate_hz,
        "gain_mv_per_pixel": rec.gain_mv_per_pixel,
        "source_image": rec.source_image,
        "leads": rec.lead_ids,
        "length_samples": rec.length_samples,
        "gaps": {k: [int(g) for g in rec.gaps.get(k, [])] for k in rec.lead_ids},
    }


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temp file in the same directory, then rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_signal(rec: SignalRecord, csv_path) -> tuple[Path, Path]:
    """Write `<name>.csv` plus its `<name>.json` sidecar; returns both paths."""
    csv_path = Path(csv_path)
    json_path = csv_path.with_suffix(".json")
    atomic_write(csv_path, signal_to_csv(rec))
    atomic_write(json_path, json.dumps(signal_sidecar(rec), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def read_signal(csv_path, sample_rate_hz: float | None = None) -> SignalRecord:
    csv_path = Path(csv_path)
    meta = {}
    side = csv_path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    with open(csv_path, newline="") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2) if header else None
    if data is None or data.size == 0:
        data = np.zeros((0, len(header)))
    rate = sample_rate_hz or meta.get("sample_rate_hz")
    if rate is None:
        raise RecordError(f"{csv_path}: sample rate unknown (no sidecar)")
    leads = {name: data[:, i] for i, name in enumerate(header)}
    return SignalRecord(leads, float(rate), meta.get("gain_mv_per_pixel"),
                        meta.get("source_image"), meta.get("gaps") or {})
