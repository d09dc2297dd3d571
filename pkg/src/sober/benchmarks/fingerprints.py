"""Reading binary fingerprint candidates from JSONL or CSV."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def _check_bits(bits):
    if bits.ndim != 2 or bits.shape[0] == 0:
        raise ValueError("no fingerprint records found")
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("fingerprint bits must be 0 or 1")
    return bits


def load_jsonl(path):
    bits, ys, labels = [], [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "bits" not in rec:
                raise ValueError(f"line {line_no}: missing 'bits'")
            bits.append(rec["bits"])
            ys.append(rec.get("y"))
            labels.append(rec.get("label"))
    widths = {len(b) for b in bits}
    if len(widths) > 1:
        raise ValueError("fingerprints have different lengths")
    y = None if any(v is None for v in ys) else np.asarray(ys, dtype=float)
    return _check_bits(np.asarray(bits, dtype=float)), y, labels


def load_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    bit_cols = [i for i, h in enumerate(header) if h.startswith("bit_")]
    data = np.asarray(rows, dtype=float)
    y = data[:, header.index("y")] if "y" in header else None
    return _check_bits(data[:, bit_cols]), y, [None] * data.shape[0]


def load_fingerprints(path):
    """Return ``(bits, y or None, labels)``; the format follows the file suffix."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    return load_jsonl(path)
