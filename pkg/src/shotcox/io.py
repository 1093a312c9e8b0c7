"""Claims and exposure file ingestion, CSV emission, stage manifests.

Claims files are CSV with header ``date,margin``: one row per claim.
Exposure files carry ``date,margin,policy_count`` with exactly one row per
(day, margin) inside the window; gaps are errors.  All outputs are plain
CSV plus a JSON manifest recording the seed, the configuration and content
hashes of inputs and outputs, so a rerun can be verified byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .counts import CountsPanel, ExposureSeries

__all__ = [
    "DataError",
    "ingest",
    "read_claims_csv",
    "read_exposure_csv",
    "write_claims_csv",
    "write_exposure_csv",
    "write_csv",
    "read_csv_rows",
    "file_sha256",
    "write_manifest",
    "read_manifest",
]


class DataError(ValueError):
    """Malformed input data; the message carries the file and line."""


def read_claims_csv(path) -> list[tuple[np.datetime64, str]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["date", "margin"]:
            raise DataError(f"{path}: expected header 'date,margin'")
        for lineno, row in enumerate(reader, start=2):
            if len(row) < 2:
                raise DataError(f"{path}:{lineno}: expected 'date,margin'")
            try:
                day = np.datetime64(row[0].strip(), "D")
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad date {row[0]!r}") from exc
            rows.append((day, row[1].strip()))
    return rows


def read_exposure_csv(path) -> dict[tuple[np.datetime64, str], float]:
    out: dict[tuple[np.datetime64, str], float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["date", "margin", "policy_count"]:
            raise DataError(f"{path}: expected header 'date,margin,policy_count'")
        for lineno, row in enumerate(reader, start=2):
            if len(row) < 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields")
            try:
                day = np.datetime64(row[0].strip(), "D")
                count = float(row[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad row {row!r}") from exc
            if count <= 0:
                raise DataError(f"{path}:{lineno}: policy_count must be positive")
            key = (day, row[1].strip())
            if key in out:
                raise DataError(f"{path}:{lineno}: duplicate (date, margin) row")
            out[key] = count
    return out


@dataclass
class IngestResult:
    panel: CountsPanel
    exposure: ExposureSeries
    policy_counts: np.ndarray  # (margins, days) raw policies
    dates: np.ndarray
    margins: tuple[str, ...]
    rejected_out_of_window: int


def ingest(
    claims: list[tuple[np.datetime64, str]],
    exposure: dict[tuple[np.datetime64, str], float],
    config: RunConfig,
) -> IngestResult:
    """Daily count panel and raw-policy exposure series over the window.

    Claims outside the window are counted and dropped; unknown margins and
    missing exposure days are errors.
    """
    dates = config.dates
    margins = config.margins
    margin_index = {m: g for g, m in enumerate(margins)}
    n_days = dates.size
    counts = np.zeros((len(margins), n_days), dtype=np.int64)
    rejected = 0
    start = config.window_start
    for day, margin in claims:
        if margin not in margin_index:
            raise DataError(f"unknown margin {margin!r}; declared: {margins}")
        offset = int((day - start).astype(int))
        if 0 <= offset < n_days:
            counts[margin_index[margin], offset] += 1
        else:
            rejected += 1

    policies = np.empty((len(margins), n_days))
    for g, margin in enumerate(margins):
        for d in range(n_days):
            key = (dates[d], margin)
            if key not in exposure:
                raise DataError(f"missing exposure row for {dates[d]} margin {margin!r}")
            policies[g, d] = exposure[key]

    return IngestResult(
        panel=CountsPanel(counts, config.delta),
        exposure=ExposureSeries(policies),
        policy_counts=policies,
        dates=dates,
        margins=margins,
        rejected_out_of_window=rejected,
    )


def write_claims_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "margin"])
        for day, margin in rows:
            writer.writerow([str(day), margin])


def write_exposure_csv(path, dates, margins, policies) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "margin", "policy_count"])
        for g, margin in enumerate(margins):
            for d, day in enumerate(dates):
                writer.writerow([str(day), margin, repr(float(policies[g, d]))])


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else str(v) for v in row])


def read_csv_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, stage, seed, config_text, inputs, outputs) -> str:
    """JSON manifest naming the stage, seed, config digest and file hashes."""
    manifest = {
        "stage": stage,
        "seed": seed,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "inputs": {os.path.basename(p): file_sha256(p) for p in inputs},
        "outputs": {os.path.basename(p): file_sha256(p) for p in outputs},
    }
    path = os.path.join(out_dir, f"manifest_{stage}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(out_dir, stage) -> dict:
    path = os.path.join(out_dir, f"manifest_{stage}.json")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
