"""Append-only experiment logs in CSV or JSONL.

Rows are flushed as soon as they are written, so an interrupted campaign
leaves a valid prefix. Reopening a log recovers the keys already present;
the harness then skips those units of work. Every row carries the base seed
and the code version, and reopening with a different seed is refused.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from . import CODE_VERSION

FORMATS = ("csv", "jsonl")
TIMING_COLUMNS = ("wall_ms",)


class SeedMismatchError(ValueError):
    """An existing log was produced with another seed."""


def format_value(value) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".17g")
    if value is None:
        return ""
    return str(value)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "item"):
        return value.item()
    return value


class ResultLog:
    """One result file with a fixed column order.

    Args:
        path: file to append to; created with a header if missing.
        columns: column names; ``seed`` and ``version`` are appended if absent.
        key_columns: columns identifying a finished unit of work.
        seed: base seed of the campaign.
        fmt: ``"csv"`` or ``"jsonl"``.
    """

    def __init__(self, path, columns, key_columns, seed: int, fmt: str = "csv"):
        if fmt not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        self.path = Path(path)
        self.columns = list(columns) + [c for c in ("seed", "version") if c not in columns]
        self.key_columns = tuple(key_columns)
        self.seed = int(seed)
        self.fmt = fmt
        self.done: set = set()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists() and self.path.stat().st_size:
            self._recover()
        elif fmt == "csv":
            self.path.write_text(",".join(self.columns) + "\n")
        else:
            self.path.write_text("")

    def _key(self, row: dict) -> tuple:
        return tuple(format_value(row[k]) for k in self.key_columns)

    def _recover(self):
        text = self.path.read_text()
        if self.fmt == "csv":
            reader = csv.DictReader(io.StringIO(text))
            if reader.fieldnames != self.columns:
                raise ValueError(f"{self.path} has columns {reader.fieldnames}, expected {self.columns}")
            rows = list(reader)
        else:
            rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        for row in rows:
            if int(row["seed"]) != self.seed:
                raise SeedMismatchError(f"{self.path} was written with seed {row['seed']}, not {self.seed}")
            self.done.add(self._key(row))

    def is_done(self, key: dict) -> bool:
        return self._key(key) in self.done

    def write(self, rows):
        """Append rows and flush."""
        lines = []
        for row in rows:
            full = dict(row)
            full.setdefault("seed", self.seed)
            full.setdefault("version", CODE_VERSION)
            missing = [c for c in self.columns if c not in full]
            if missing:
                raise KeyError(f"row lacks column(s) {missing}")
            if self.fmt == "csv":
                lines.append(",".join(format_value(full[c]) for c in self.columns) + "\n")
            else:
                lines.append(json.dumps({c: _json_value(full[c]) for c in self.columns}) + "\n")
            self.done.add(self._key(full))
        with self.path.open("a", newline="\n") as fh:
            fh.write("".join(lines))
            fh.flush()


def read_rows(path) -> list[dict]:
    """Load a CSV or JSONL log as a list of string- or value-keyed dicts."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".jsonl":
        return [json.loads(line) for line in text.splitlines() if line.strip()]
    return list(csv.DictReader(io.StringIO(text)))


def write_table(path, columns, rows) -> Path:
    """Write a small derived table (no resume, overwritten each time)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [",".join(columns)]
    out += [",".join(format_value(r[c]) for c in columns) for r in rows]
    path.write_text("\n".join(out) + "\n")
    return path
