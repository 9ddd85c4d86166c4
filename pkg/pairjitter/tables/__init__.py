"""Tabular helpers used by the CSV exporters."""

from __future__ import annotations

from .simple_table import Row, SimpleTable

__all__ = ["Row", "SimpleTable"]
