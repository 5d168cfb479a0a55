"""Event-log parsing, period aggregation, RFM series and RFM quintile scores."""

from __future__ import annotations

import csv
import gzip
import io
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateCohort, EmptyLog, FormatError, RangeError
from .series import SeriesMatrix

log = logging.getLogger(__name__)

FORMATS = ("cdnow", "generic-csv")
MAX_MALFORMED_FRACTION = 0.10
QUINTILES = 5


@dataclass(frozen=True)
class EventRecord:
    user_id: str
    timestamp: date
    quantity: int = 1
    amount: float = 0.0


@dataclass(frozen=True)
class EventLog:
    records: tuple
    n_lines: int = 0
    n_malformed: int = 0

    def __post_init__(self):
        if not self.records:
            raise EmptyLog("event log has no valid records")

    @property
    def span(self) -> tuple[date, date]:
        stamps = [r.timestamp for r in self.records]
        return min(stamps), max(stamps)

    @property
    def users(self) -> list[str]:
        return sorted({r.user_id for r in self.records})

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class PeriodGrid:
    origin: date
    period_length: int = 7
    num_periods: int = 2

    def __post_init__(self):
        if self.period_length < 1:
            raise ValueError("period_length must be a positive number of days")
        if self.num_periods < 2:
            raise ValueError("a grid needs at least two periods")

    @classmethod
    def covering(cls, log: EventLog, period_length: int = 7) -> "PeriodGrid":
        first, last = log.span
        num = (last - first).days // period_length + 1
        return cls(first, period_length, max(num, 2))

    @property
    def end(self) -> date:
        """First day after the grid."""
        return self.origin + timedelta(days=self.period_length * self.num_periods)

    def index(self, day: date) -> int:
        k = (day - self.origin).days // self.period_length
        if not 0 <= k < self.num_periods:
            raise RangeError(f"{day} lies outside the grid [{self.origin}, {self.end})")
        return k

    def period_end(self, k: int) -> date:
        return self.origin + timedelta(days=self.period_length * (k + 1) - 1)


@dataclass(frozen=True)
class RFMSeries:
    user_id: str
    recency: np.ndarray
    frequency: np.ndarray
    monetary: np.ndarray


@dataclass(frozen=True)
class RFMScore:
    r: int
    f: int
    m: int

    def code(self) -> str:
        return f"{self.r}{self.f}{self.m}"


# --------------------------------------------------------------------------
# parsing


def _parse_cdnow_line(line: str) -> EventRecord:
    parts = line.split()
    if len(parts) != 4:
        raise ValueError(line)
    user, day, qty, amount = parts
    rec = EventRecord(user, datetime.strptime(day, "%Y%m%d").date(), int(qty), float(amount))
    _check_record(rec)
    return rec


def _check_record(rec: EventRecord) -> None:
    if rec.amount < 0 or not np.isfinite(rec.amount):
        raise ValueError("negative or non-finite amount")
    if rec.quantity < 1:
        raise ValueError("quantity must be >= 1")


def parse_event_log(text, format: str) -> EventLog:
    """Parse a CDNow or generic-CSV event log.

    ``text`` is a string or a text stream. Malformed lines are skipped and
    counted; more than 10% malformed lines means the wrong format was chosen.
    """
    if format not in FORMATS:
        raise FormatError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not isinstance(text, str):
        text = text.read()
    if not text.strip():
        raise EmptyLog("empty input")

    records: list[EventRecord] = []
    bad = 0
    if format == "cdnow":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        for ln in lines:
            try:
                records.append(_parse_cdnow_line(ln))
            except ValueError:
                bad += 1
        total = len(lines)
    else:
        reader = csv.DictReader(io.StringIO(text))
        fields = set(reader.fieldnames or ())
        missing = {"user_id", "date", "amount"} - fields
        if missing:
            raise FormatError(f"generic-csv header lacks {sorted(missing)}")
        total = 0
        for row in reader:
            total += 1
            try:
                qty = row.get("quantity")
                rec = EventRecord(
                    row["user_id"].strip(),
                    date.fromisoformat(row["date"].strip()),
                    int(qty) if qty not in (None, "") else 1,
                    float(row["amount"]),
                )
                if not rec.user_id:
                    raise ValueError("blank user")
                _check_record(rec)
                records.append(rec)
            except (ValueError, TypeError, AttributeError):
                bad += 1
    if not records:
        if bad:
            raise FormatError(f"all {total} lines malformed; is the format {format!r} right?")
        raise EmptyLog("no records")
    if bad > MAX_MALFORMED_FRACTION * total:
        raise FormatError(f"{bad} of {total} lines malformed; is the format {format!r} right?")
    log.info("parsed %d records, %d malformed lines", len(records), bad)
    return EventLog(tuple(records), n_lines=total, n_malformed=bad)


def read_event_log(path, format: str) -> EventLog:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt", newline="") as fh:
        return parse_event_log(fh, format)


def format_event_log(log_: EventLog, format: str) -> str:
    """Serialize so that :func:`parse_event_log` recovers the same records."""
    out = io.StringIO()
    if format == "cdnow":
        for r in log_.records:
            out.write(f"{r.user_id} {r.timestamp:%Y%m%d} {r.quantity} {r.amount!r}\n")
    elif format == "generic-csv":
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["user_id", "date", "quantity", "amount"])
        for r in log_.records:
            w.writerow([r.user_id, r.timestamp.isoformat(), r.quantity, repr(r.amount)])
    else:
        raise FormatError(f"unknown format {format!r}")
    return out.getvalue()


# --------------------------------------------------------------------------
# aggregation


def _per_user_periods(log_: EventLog, grid: PeriodGrid):
    by_user: dict[str, list[tuple[int, EventRecord]]] = defaultdict(list)
    for r in log_.records:
        by_user[r.user_id].append((grid.index(r.timestamp), r))
    return by_user


def aggregate_demand(log_: EventLog, grid: PeriodGrid, value: str = "amount",
                     users: Sequence[str] | None = None) -> SeriesMatrix:
    """Sum ``value`` per user and period into a fully observed T x n matrix.

    Columns follow ``users`` if given, else sorted user ids.
    """
    if value not in ("amount", "quantity"):
        raise ValueError(f"value must be 'amount' or 'quantity', got {value!r}")
    users = list(users) if users is not None else log_.users
    col = {u: j for j, u in enumerate(users)}
    Y = np.zeros((grid.num_periods, len(users)))
    for r in log_.records:
        t = grid.index(r.timestamp)
        j = col.get(r.user_id)
        if j is not None:
            Y[t, j] += r.amount if value == "amount" else r.quantity
    return SeriesMatrix.dense(Y, users)


def rfm_from_counts(counts: np.ndarray, amounts: np.ndarray):
    """Recency, frequency and monetary series from per-period event counts
    and amounts (arrays of shape (T,) or (T, n)).

    Recency is the number of periods since the latest event, measured at each
    period end, with the constant sentinel T + 1 before the first event.
    """
    counts = np.asarray(counts, dtype=float)
    amounts = np.asarray(amounts, dtype=float)
    squeeze = counts.ndim == 1
    if squeeze:
        counts, amounts = counts[:, None], amounts[:, None]
    T = counts.shape[0]
    t = np.arange(T)[:, None]
    marks = np.where(counts > 0, t, -1)
    last = np.maximum.accumulate(marks, axis=0)
    recency = np.where(last >= 0, t - last, T + 1).astype(float)
    frequency = np.cumsum(counts, axis=0)
    monetary = amounts.copy()
    if squeeze:
        return recency[:, 0], frequency[:, 0], monetary[:, 0]
    return recency, frequency, monetary


def rfm_series(log_: EventLog, grid: PeriodGrid, users: Iterable[str] | None = None):
    """Per-user RFM time series on ``grid``.

    Returns ``(series, excluded)`` where ``excluded`` lists requested users
    without any event (they are dropped rather than zero-filled).
    """
    by_user = _per_user_periods(log_, grid)
    wanted = sorted(by_user) if users is None else list(users)
    out, excluded = [], []
    T = grid.num_periods
    for u in wanted:
        events = by_user.get(u)
        if not events:
            excluded.append(u)
            continue
        counts = np.zeros(T)
        amounts = np.zeros(T)
        for k, r in events:
            counts[k] += 1
            amounts[k] += r.amount
        rec, freq, mon = rfm_from_counts(counts, amounts)
        out.append(RFMSeries(u, rec, freq, mon))
    if excluded:
        log.info("rfm_series: %d users without events excluded", len(excluded))
    return out, excluded


def rfm_series_from_matrix(Y: SeriesMatrix):
    """RFM series treating every nonzero observed period as one event."""
    vals = np.where(Y.observed, Y.values, 0.0)
    counts = (vals != 0).astype(float)
    rec, freq, mon = rfm_from_counts(counts, vals)
    out, excluded = [], []
    for j, u in enumerate(Y.ids):
        if counts[:, j].sum() == 0:
            excluded.append(u)
        else:
            out.append(RFMSeries(u, rec[:, j], freq[:, j], mon[:, j]))
    return out, excluded


# --------------------------------------------------------------------------
# quintile scores


def quintile_ranks(values: Sequence[float], keys: Sequence, higher_is_better: bool = True) -> list[int]:
    """Rank 1..5 by sorted position; ties broken by ``keys`` (stable)."""
    n = len(values)
    goodness = [v if higher_is_better else -v for v in values]
    order = sorted(range(n), key=lambda i: (goodness[i], keys[i]))
    ranks = [0] * n
    for pos, i in enumerate(order):
        ranks[i] = pos * QUINTILES // n + 1
    return ranks


def rfm_scores(log_: EventLog, as_of: date) -> dict[str, RFMScore]:
    """Classic RFM quintile scores at ``as_of``.

    Lowest recency scores 5, highest frequency and monetary score 5; every
    bucket holds floor(n/5) or ceil(n/5) users.
    """
    last: dict[str, date] = {}
    freq: dict[str, int] = defaultdict(int)
    mon: dict[str, float] = defaultdict(float)
    for r in log_.records:
        if r.timestamp > as_of:
            raise RangeError(f"event on {r.timestamp} after as_of {as_of}")
        if r.user_id not in last or r.timestamp > last[r.user_id]:
            last[r.user_id] = r.timestamp
        freq[r.user_id] += 1
        mon[r.user_id] += r.amount
    users = sorted(last)
    if len(users) < QUINTILES:
        warnings.warn(f"only {len(users)} users; quintile ranks degenerate", DegenerateCohort)
    rec_vals = [(as_of - last[u]).days for u in users]
    r = quintile_ranks(rec_vals, users, higher_is_better=False)
    f = quintile_ranks([freq[u] for u in users], users)
    m = quintile_ranks([mon[u] for u in users], users)
    return {u: RFMScore(r[i], f[i], m[i]) for i, u in enumerate(users)}
