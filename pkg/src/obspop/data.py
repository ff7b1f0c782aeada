"""Capture histories, contingency tables and CSV ingestion.

One CSV row per observed individual, one 0/1 column per list.  The
all-zero history is never stored: it is the unobservable cell whose
count the estimators try to recover.
"""
from __future__ import annotations

import csv
import io
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

MAX_LISTS = 20
HARES_M = 68
HARES_T = 6
HARES_ENV = "OBSPOP_HARES_CSV"


class CaptureDataError(ValueError):
    """Base class for malformed capture data."""


class NonBinaryCell(CaptureDataError):
    pass


class RaggedRows(CaptureDataError):
    pass


class AllZeroRow(CaptureDataError):
    pass


class EmptyInput(CaptureDataError):
    pass


class FixtureMissing(FileNotFoundError):
    pass


class FixtureShapeMismatch(CaptureDataError):
    pass


def history_key(bits: Iterable[int]) -> str:
    """Bitstring for a history, list 1 leftmost."""
    return "".join("1" if b else "0" for b in bits)


@dataclass(frozen=True)
class CaptureDataset:
    """Observed capture histories over ``T`` lists.

    Attributes
    ----------
    histories : ndarray of shape (m, T), dtype int8
        One row per observed individual; no row is all zero.
    cell_counts : dict
        Maps the bitstring of each observed (nonzero) history to its count.
    """

    histories: np.ndarray
    cell_counts: dict = field(compare=False)

    def __post_init__(self):
        h = self.histories
        if h.ndim != 2 or h.shape[0] == 0:
            raise EmptyInput("a dataset needs at least one observed history")
        if not 1 <= h.shape[1] <= MAX_LISTS:
            raise CaptureDataError(f"T must be in [1, {MAX_LISTS}], got {h.shape[1]}")
        if np.any((h != 0) & (h != 1)):
            raise NonBinaryCell("capture histories must be 0/1")
        if np.any(h.sum(axis=1) == 0):
            raise AllZeroRow("the all-zero history cannot be observed")
        h.setflags(write=False)

    @classmethod
    def from_histories(cls, histories) -> "CaptureDataset":
        h = np.asarray(histories, dtype=np.int8)
        if h.ndim != 2:
            raise RaggedRows("histories must form an (m, T) array")
        return cls(h, tabulate(h))

    @property
    def m(self) -> int:
        return self.histories.shape[0]

    @property
    def T(self) -> int:
        return self.histories.shape[1]

    def __eq__(self, other):
        if not isinstance(other, CaptureDataset):
            return NotImplemented
        return self.T == other.T and self.cell_counts == other.cell_counts

    def count_vector(self) -> np.ndarray:
        """Counts for all ``2**T - 1`` nonzero histories in :func:`nonzero_histories` order."""
        rows = nonzero_histories(self.T)
        return np.array([self.cell_counts.get(history_key(r), 0) for r in rows], dtype=float)

    def to_csv(self, header: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow([f"list{t + 1}" for t in range(self.T)])
        w.writerows(self.histories.tolist())
        return buf.getvalue()

    def table_csv(self) -> str:
        """Serialized contingency table with ``history,count`` columns."""
        lines = ["history,count"]
        lines += [f"{k},{v}" for k, v in sorted(self.cell_counts.items())]
        return "\n".join(lines) + "\n"


def nonzero_histories(T: int) -> np.ndarray:
    """All ``2**T - 1`` nonzero histories, list 1 as the most significant bit."""
    if not 1 <= T <= MAX_LISTS:
        raise CaptureDataError(f"T must be in [1, {MAX_LISTS}], got {T}")
    codes = np.arange(1, 2**T)
    shifts = np.arange(T - 1, -1, -1)
    return ((codes[:, None] >> shifts) & 1).astype(np.int8)


def tabulate(histories) -> dict[str, int]:
    """Count each distinct capture history.

    >>> tabulate([(0, 1, 0), (0, 1, 0), (1, 1, 0)])
    {'010': 2, '110': 1}
    """
    return dict(Counter(history_key(row) for row in np.asarray(histories).tolist()))


def parse_csv(text: str, header: bool = False) -> CaptureDataset:
    """Parse one-row-per-individual CSV text into a :class:`CaptureDataset`."""
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if header and rows:
        rows = rows[1:]
    if not rows:
        raise EmptyInput("no capture histories found")
    width = len(rows[0])
    if width < 2:
        raise CaptureDataError("need at least two lists (T >= 2)")
    out = []
    for lineno, row in enumerate(rows, start=1 + int(header)):
        if len(row) != width:
            raise RaggedRows(f"row {lineno} has {len(row)} cells, expected {width}")
        cells = [c.strip() for c in row]
        if any(c not in ("0", "1") for c in cells):
            raise NonBinaryCell(f"row {lineno} has a cell other than 0/1: {row}")
        bits = [int(c) for c in cells]
        if not any(bits):
            raise AllZeroRow(f"row {lineno} is the all-zero history")
        out.append(bits)
    return CaptureDataset.from_histories(out)


def read_csv(path, header: bool | None = None) -> CaptureDataset:
    text = Path(path).read_text(encoding="utf-8")
    if header is None:
        first = text.lstrip().split("\n", 1)[0]
        header = any(c.strip() not in ("0", "1") for c in first.split(","))
    return parse_csv(text, header=header)


def from_cell_counts(counts: Mapping[str, int]) -> CaptureDataset:
    """Expand a ``history -> count`` table into individual rows."""
    rows = []
    for key, n in counts.items():
        rows.extend([[int(c) for c in key]] * int(n))
    if not rows:
        raise EmptyInput("table has no observed individuals")
    return CaptureDataset.from_histories(rows)


def hares_path() -> Path:
    """Where the snowshoe-hare fixture is looked up.

    ``$OBSPOP_HARES_CSV`` wins; otherwise ``obspop/data/hares.csv``.
    """
    env = os.environ.get(HARES_ENV)
    if env:
        return Path(env)
    return Path(__file__).parent / "data" / "hares.csv"


def load_hares(path=None) -> CaptureDataset:
    """Load the Otis et al. snowshoe-hare histories (m=68, T=6).

    The histories are not redistributed with this package; see
    ``obspop/data/HARES.md`` for provenance and the expected file layout.
    """
    p = Path(path) if path is not None else hares_path()
    if not p.is_file():
        raise FixtureMissing(
            f"snowshoe-hare fixture not found at {p}; set ${HARES_ENV} or see data/HARES.md"
        )
    ds = read_csv(p)
    if ds.m != HARES_M or ds.T != HARES_T:
        raise FixtureShapeMismatch(
            f"hare fixture must have m={HARES_M}, T={HARES_T}; got m={ds.m}, T={ds.T}"
        )
    return ds
