"""Delimited and JSON output for the command-line tools."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

SIG_DIGITS = 12


def normalize(value: Any) -> Any:
    """Round floats to 12 significant digits; NaN and infinities become None."""
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        return float(f"{value:.{SIG_DIGITS}g}")
    return value


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.{SIG_DIGITS}g}"
    return str(value)


def parse_cell(text: str) -> Any:
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def add(self, *values: Any) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(tuple(normalize(v) for v in values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_cell(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> Table:
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        return cls(tuple(header), [tuple(parse_cell(c) for c in row) for row in reader])

    def to_json(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return normalize(obj)


@dataclass
class Report:
    """Named tables plus scalar metadata; the first table is the primary one."""

    tables: dict[str, Table]
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def primary(self) -> str:
        return next(iter(self.tables))

    def meta_table(self) -> Table:
        t = Table(("key", "value"))
        for k, v in self.meta.items():
            t.add(k, v)
        return t

    def to_json(self) -> str:
        doc = {
            "meta": _clean(self.meta),
            "tables": {name: t.to_json() for name, t in self.tables.items()},
        }
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"

    def write(self, out: Path | None, fmt: str, stream) -> list[Path]:
        """Write to ``out`` (or ``stream`` when ``out`` is None); return files written.

        CSV puts the primary table at ``out`` and every other table, plus the
        metadata, at ``<stem>.<name>.csv`` next to it.
        """
        if fmt == "json":
            text = self.to_json()
            if out is None:
                stream.write(text)
                return []
            out.write_text(text)
            return [out]
        if out is None:
            stream.write(self.tables[self.primary].to_csv())
            return []
        written = [out]
        out.write_text(self.tables[self.primary].to_csv())
        extras: Iterable[tuple[str, Table]] = list(self.tables.items())[1:]
        if self.meta:
            extras = [*extras, ("meta", self.meta_table())]
        for name, table in extras:
            path = out.with_name(f"{out.stem}.{name}.csv")
            path.write_text(table.to_csv())
            written.append(path)
        return written


def table_from_rows(columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Table:
    t = Table(tuple(columns))
    for r in rows:
        t.add(*r)
    return t
