"""Minimal table used for CSV exports and console previews.

Rows are dictionaries of already formatted cells, so the written CSV is
byte-for-byte reproducible and does not depend on an optional dataframe
library being installed.
"""

from __future__ import annotations

import csv
from collections.abc import Iterator, Sequence
from pathlib import Path
from typing import Any

Row = dict[str, Any]


class SimpleTable:
    """Ordered rows with a fixed column list."""

    def __init__(self, rows: Sequence[Row], columns: Sequence[str] | None = None):
        """Normalise row data and column order.

        Parameters
        ----------
        rows:
            Sequence of dictionaries representing table rows. Missing keys are
            filled with empty strings.
        columns:
            Optional explicit column order. Unlisted keys discovered in ``rows``
            are appended so that no data is dropped.
        """

        self._rows = [dict(row) for row in rows]
        final_columns: list[str] = list(columns) if columns is not None else []
        seen = set(final_columns)
        for row in self._rows:
            for key in row:
                if key not in seen:
                    final_columns.append(key)
                    seen.add(key)
        self._columns = final_columns
        for row in self._rows:
            for column in self._columns:
                row.setdefault(column, "")

    @property
    def columns(self) -> list[str]:
        return list(self._columns)

    def column(self, key: str) -> list[Any]:
        """Return the values of column ``key``."""

        if key not in self._columns:
            raise KeyError(key)
        return [row[key] for row in self._rows]

    def __iter__(self) -> Iterator[Row]:
        return iter(dict(row) for row in self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def to_csv(self, path: str | Path, *, comments: Sequence[str] = ()) -> None:
        """Write the table to ``path`` as UTF-8 CSV, preceded by ``# `` comment lines."""

        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            for comment in comments:
                handle.write(f"# {comment}\n")
            writer = csv.DictWriter(handle, fieldnames=self._columns, lineterminator="\n")
            writer.writeheader()
            writer.writerows(self._rows)

    def head(self, n: int) -> SimpleTable:
        """Return the first ``n`` rows."""

        return SimpleTable(self._rows[:n], self._columns)

    def to_string(self) -> str:
        """Render the table as aligned text for console previews."""

        if not self._rows:
            return ""
        data = [[str(row.get(col, "")) for col in self._columns] for row in self._rows]
        widths = [len(col) for col in self._columns]
        for row in data:
            for idx, cell in enumerate(row):
                widths[idx] = max(widths[idx], len(cell))
        lines = ["  ".join(title.ljust(widths[idx]) for idx, title in enumerate(self._columns)).rstrip()]
        for row in data:
            lines.append("  ".join(cell.ljust(widths[idx]) for idx, cell in enumerate(row)).rstrip())
        return "\n".join(lines)


__all__ = ["Row", "SimpleTable"]
