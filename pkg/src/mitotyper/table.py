"""Feature-table interchange: typed rows, CSV load/save, source concatenation.

The on-disk format is comma-separated UTF-8 with the header
``patient_id,spot_id,unit_id,variant,label,source,f0,...,f{d-1}`` where d is
the widest dimension in the file.  Rows carry exactly as many value columns
as their source's dimension, so sources of different widths can share one
file; per-source dimensions are inferred from the rows and must agree within
a source.  Values are written with 9 significant digits, which round-trips
exactly through load/save.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import TableError

__all__ = [
    "LABELS",
    "KNOWN_SOURCES",
    "FeatureRow",
    "FeatureTable",
    "load_feature_table",
    "save_feature_table",
    "concatenate_sources",
]

LABELS = ("CC", "CCP", "ONC")
KNOWN_SOURCES = ("HIST", "fc6", "fc7", "fc8", "baseline", "combined")
KEY_FIELDS = ("patient_id", "spot_id", "unit_id", "variant", "label", "source")


@dataclass(frozen=True)
class FeatureRow:
    patient_id: str
    spot_id: str
    unit_id: str
    variant: str
    label: str
    source: str
    values: np.ndarray

    def __post_init__(self):
        if self.label not in LABELS:
            raise TableError(f"unknown label {self.label!r}")
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size == 0:
            raise TableError("row carries no feature values")
        object.__setattr__(self, "values", values)

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.patient_id, self.spot_id, self.unit_id, self.source)

    @property
    def unit_key(self) -> tuple[str, str, str]:
        return (self.patient_id, self.spot_id, self.unit_id)


@dataclass(frozen=True)
class FeatureTable:
    rows: tuple[FeatureRow, ...]
    dimensions: dict[str, int] = field(init=False, compare=False)

    def __post_init__(self):
        rows = tuple(self.rows)
        if not rows:
            raise TableError("empty table")
        object.__setattr__(self, "rows", rows)
        dims: dict[str, int] = {}
        seen: set[tuple[str, str, str, str]] = set()
        for row in rows:
            want = dims.setdefault(row.source, row.values.size)
            if row.values.size != want:
                raise TableError(
                    f"source {row.source!r} dimension mismatch: {row.values.size} != {want}"
                )
            if row.key in seen:
                raise TableError(f"duplicate key {row.key!r}")
            seen.add(row.key)
        object.__setattr__(self, "dimensions", dims)

    def __len__(self) -> int:
        return len(self.rows)

    def rows_for(self, source: str) -> tuple[FeatureRow, ...]:
        return tuple(r for r in self.rows if r.source == source)

    def patients(self) -> tuple[str, ...]:
        out: list[str] = []
        for r in self.rows:
            if r.patient_id not in out:
                out.append(r.patient_id)
        return tuple(out)

    def matrix(self, source: str) -> tuple[np.ndarray, list[str], list[FeatureRow]]:
        """Stacked (n, d) float64 matrix, labels, and the contributing rows."""
        rows = self.rows_for(source)
        if not rows:
            raise TableError(f"no rows with source {source!r}")
        x = np.stack([r.values for r in rows])
        return x, [r.label for r in rows], list(rows)


def format_value(v: float) -> str:
    return "%.9g" % v


def save_feature_table(table: FeatureTable, path: str | os.PathLike) -> None:
    width = max(table.dimensions.values())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_table(table, fh, width)


def _write_table(table: FeatureTable, fh: io.TextIOBase, width: int) -> None:
    header = list(KEY_FIELDS) + [f"f{i}" for i in range(width)]
    fh.write(",".join(header) + "\n")
    for row in table.rows:
        fields = [row.patient_id, row.spot_id, row.unit_id, row.variant, row.label, row.source]
        fields.extend(format_value(v) for v in row.values)
        fh.write(",".join(fields) + "\n")


def load_feature_table(path: str | os.PathLike) -> FeatureTable:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    # external producers may prepend provenance comments; skip them along
    # with blank lines but keep real line numbers for diagnostics
    numbered = [
        (i, ln) for i, ln in enumerate(lines, start=1)
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not numbered:
        raise TableError("empty table")

    header_lineno, header_text = numbered[0]
    header = header_text.split(",")
    if header[: len(KEY_FIELDS)] != list(KEY_FIELDS):
        raise TableError(
            f"bad header: expected columns {','.join(KEY_FIELDS)},f0,...", line=header_lineno
        )

    rows: list[FeatureRow] = []
    dims: dict[str, int] = {}
    seen: dict[tuple[str, str, str, str], int] = {}
    for lineno, raw in numbered[1:]:
        parts = raw.split(",")
        if len(parts) < len(KEY_FIELDS) + 1:
            raise TableError("row has no feature values", line=lineno)
        patient_id, spot_id, unit_id, variant, label, source = parts[: len(KEY_FIELDS)]
        if label not in LABELS:
            raise TableError(f"unknown label {label!r}", line=lineno)
        try:
            values = np.array([float(v) for v in parts[len(KEY_FIELDS) :]], dtype=np.float64)
        except ValueError as exc:
            raise TableError(f"bad value: {exc}", line=lineno) from None
        want = dims.setdefault(source, values.size)
        if values.size != want:
            raise TableError(
                f"source {source!r} dimension mismatch: {values.size} != {want}", line=lineno
            )
        key = (patient_id, spot_id, unit_id, source)
        if key in seen:
            raise TableError(f"duplicate key {key!r} (first at line {seen[key]})", line=lineno)
        seen[key] = lineno
        rows.append(FeatureRow(patient_id, spot_id, unit_id, variant, label, source, values))
    if not rows:
        raise TableError("empty table")
    return FeatureTable(tuple(rows))


def concatenate_sources(table: FeatureTable, sources: list[str]) -> FeatureTable:
    """Join the requested sources per unit into a new "combined" source.

    Units are matched on (patient_id, spot_id, unit_id).  A source missing
    the exact unit falls back to that spot's variant-"orig" row, so one
    per-spot flat vector can pair with each whole-image augmentation variant.
    A unit with neither match raises an "incomplete unit" error.
    """
    if not sources:
        raise TableError("no sources requested")
    for s in sources:
        if s not in table.dimensions:
            raise TableError(f"source {s!r} not present in table")

    exact: dict[str, dict[tuple[str, str, str], FeatureRow]] = {s: {} for s in sources}
    # value None marks a spot whose source has several "orig" rows, which
    # makes the fallback ambiguous (patch tables look like this)
    orig: dict[str, dict[tuple[str, str], Optional[FeatureRow]]] = {s: {} for s in sources}
    units: list[tuple[str, str, str]] = []
    unit_seen: set[tuple[str, str, str]] = set()
    for row in table.rows:
        if row.source not in exact:
            continue
        exact[row.source][row.unit_key] = row
        if row.variant == "orig":
            spot_key = (row.patient_id, row.spot_id)
            orig[row.source][spot_key] = None if spot_key in orig[row.source] else row
        if row.unit_key not in unit_seen:
            unit_seen.add(row.unit_key)
            units.append(row.unit_key)

    out: list[FeatureRow] = []
    for unit in units:
        patient_id, spot_id, unit_id = unit
        parts: list[FeatureRow] = []
        for s in sources:
            row = exact[s].get(unit)
            if row is None:
                row = orig[s].get((patient_id, spot_id))
                if row is None and (patient_id, spot_id) in orig[s]:
                    raise TableError(
                        f"incomplete unit {unit!r}: source {s!r} has several "
                        '"orig" rows for the spot, so no single fallback exists'
                    )
            if row is None:
                raise TableError(f"incomplete unit {unit!r}: source {s!r} has no row for it")
            parts.append(row)
        anchor = next((p for p in parts if p.unit_key == unit), parts[0])
        labels = {p.label for p in parts}
        if len(labels) != 1:
            raise TableError(f"unit {unit!r} mixes labels {sorted(labels)}")
        out.append(
            FeatureRow(
                patient_id,
                spot_id,
                unit_id,
                anchor.variant,
                anchor.label,
                "combined",
                np.concatenate([p.values for p in parts]),
            )
        )
    return FeatureTable(tuple(out))
