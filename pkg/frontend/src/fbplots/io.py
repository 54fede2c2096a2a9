"""Read fbtransport output tables (CSV or the JSON mirror)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA = (
    "run_id", "lattice", "n_cells", "x", "alpha", "eta", "moments",
    "rvecs", "seed", "E", "observable", "value", "stderr",
)

# everything else is numeric when present; moments can be the literal "auto"
_STRING_COLUMNS = frozenset({"run_id", "lattice", "observable", "moments"})


class SchemaError(ValueError):
    """Input file does not conform to the output-table schema."""


@dataclass
class Table:
    """One parsed output file: normalized rows plus run metadata."""

    path: str
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def run_id(self) -> str:
        return str(self.metadata.get("run_id", ""))

    @property
    def config(self) -> dict:
        cfg = self.metadata.get("config", {})
        return cfg if isinstance(cfg, dict) else {}

    def column(self, name: str, rows=None):
        return [r[name] for r in (self.rows if rows is None else rows)]

    def with_observable(self, name: str) -> list:
        return [r for r in self.rows if r["observable"] == name]

    def observables(self) -> list:
        seen = []
        for r in self.rows:
            if r["observable"] not in seen:
                seen.append(r["observable"])
        return seen


def _check_columns(present, path: str) -> None:
    missing = [c for c in SCHEMA if c not in present]
    unexpected = [c for c in present if c not in SCHEMA]
    if missing or unexpected:
        raise SchemaError(
            f"{path}: column mismatch against the output schema"
            + (f"; missing: {', '.join(missing)}" if missing else "")
            + (f"; unexpected: {', '.join(unexpected)}" if unexpected else "")
        )


def _normalize(name: str, cell):
    if cell is None or cell == "":
        return None
    if name in _STRING_COLUMNS:
        return str(cell)
    try:
        return float(cell)
    except (TypeError, ValueError) as err:
        raise SchemaError(f"column {name}: non-numeric cell {cell!r}") from err


def _read_csv(path: Path) -> Table:
    metadata = {}
    data_lines = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                # metadata comments: "# key: value", config value is JSON;
                # parsed as raw text so commas inside the JSON survive
                key, _, value = line[1:].strip().partition(":")
                metadata[key.strip()] = value.strip()
            else:
                data_lines.append(line)
    header = None
    rows = []
    for record in csv.reader(data_lines):
        if not record:
            continue
        if header is None:
            header = record
            _check_columns(header, str(path))
            continue
        if len(record) != len(header):
            raise SchemaError(
                f"{path}: row with {len(record)} cells against "
                f"{len(header)} columns"
            )
        rows.append({c: _normalize(c, v) for c, v in zip(header, record)})
    if header is None:
        raise SchemaError(f"{path}: no header row (empty input?)")
    if "config" in metadata:
        try:
            metadata["config"] = json.loads(metadata["config"])
        except json.JSONDecodeError:
            pass  # legible metadata is a courtesy, not a contract
    return Table(path=str(path), rows=rows, metadata=metadata)


def _read_json(path: Path) -> Table:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as err:
            raise SchemaError(f"{path}: not valid JSON: {err}") from err
    if not isinstance(payload, dict) or "rows" not in payload:
        raise SchemaError(f"{path}: expected an object with 'rows'")
    rows = []
    for i, row in enumerate(payload["rows"]):
        if not isinstance(row, dict):
            raise SchemaError(f"{path}: rows[{i}] is not an object")
        _check_columns(list(row), f"{path} rows[{i}]")
        rows.append({c: _normalize(c, row[c]) for c in SCHEMA})
    meta = payload.get("metadata", {})
    return Table(path=str(path), rows=rows,
                 metadata=meta if isinstance(meta, dict) else {})


def read_table(path) -> Table:
    """Parse one output file; the suffix picks the format.

    Raises SchemaError for anything that does not conform: wrong columns
    (with the offending names spelled out), malformed cells, or a file
    with no data rows.
    """
    p = Path(path)
    if not p.exists():
        raise SchemaError(f"{p}: no such file")
    table = _read_json(p) if p.suffix.lower() == ".json" else _read_csv(p)
    if not table.rows:
        raise SchemaError(f"{p}: no data rows")
    return table
