"""Transaction ledger ingestion: parsing, validation, rate tables, persistence.

Input formats:
  - transactions: line-delimited JSON or CSV with header; fields
    token_address, token_id, from_address, to_address, value (ETH decimal
    string), block_number, block_timestamp (ISO-8601 UTC)
  - exchange rates: CSV with header date,eth_usd,gas_eth (date YYYY-MM-DD)

Zero-value records are transfers, positive-value records are sales.
Self-trades (from == to) are legal and preserved.
"""

import csv
import io
import json
import sqlite3
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, datetime, timezone
from enum import Enum
from math import isfinite
from pathlib import Path

TRANSACTION_FIELDS = (
    "token_address",
    "token_id",
    "from_address",
    "to_address",
    "value",
    "block_number",
    "block_timestamp",
)


class TransactionKind(Enum):
    SALE = "sale"
    TRANSFER = "transfer"


@dataclass(frozen=True, slots=True)
class TransactionRecord:
    token_address: str
    token_id: str
    from_address: str
    to_address: str
    value_eth: float
    block_number: int
    timestamp: datetime  # always tz-aware UTC

    @property
    def day(self) -> date:
        return self.timestamp.date()

    @property
    def token_key(self) -> tuple[str, str]:
        return (self.token_address, self.token_id)


def classify_transaction(record: TransactionRecord) -> TransactionKind:
    """A zero-value record is a transfer, any positive value is a sale."""
    return TransactionKind.TRANSFER if record.value_eth == 0 else TransactionKind.SALE


@dataclass(frozen=True, slots=True)
class RejectedLine:
    line_number: int
    reason: str


@dataclass
class ParseReport:
    records: list[TransactionRecord]
    rejected: list[RejectedLine]

    @property
    def accepted_count(self) -> int:
        return len(self.records)


def _parse_timestamp(raw: str) -> datetime:
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _record_from_fields(fields: dict) -> TransactionRecord | str:
    """Build a record from a raw field dict, or return a rejection reason."""
    for name in TRANSACTION_FIELDS:
        if name not in fields or fields[name] is None or fields[name] == "":
            return f"missing field {name}"
    for name in ("token_address", "token_id", "from_address", "to_address"):
        if not str(fields[name]).strip():
            return f"missing field {name}"
    try:
        value = float(fields["value"])
    except (TypeError, ValueError):
        return f"invalid value {fields['value']!r}"
    if not isfinite(value):
        return f"invalid value {fields['value']!r}"
    if value < 0:
        return f"negative value {fields['value']!r}"
    raw_block = fields["block_number"]
    try:
        block = int(str(raw_block))
    except (TypeError, ValueError):
        return f"invalid block_number {raw_block!r}"
    if block < 0:
        return f"invalid block_number {raw_block!r}"
    try:
        ts = _parse_timestamp(str(fields["block_timestamp"]))
    except ValueError:
        return f"invalid block_timestamp {fields['block_timestamp']!r}"
    return TransactionRecord(
        token_address=str(fields["token_address"]).strip(),
        token_id=str(fields["token_id"]).strip(),
        from_address=str(fields["from_address"]).strip(),
        to_address=str(fields["to_address"]).strip(),
        value_eth=value,
        block_number=block,
        timestamp=ts,
    )


def _parse_json_chunk(chunk: list[tuple[int, str]]) -> list[tuple[int, TransactionRecord | str]]:
    out = []
    for line_number, line in chunk:
        text = line.strip()
        if not text:
            continue
        try:
            fields = json.loads(text)
        except json.JSONDecodeError as exc:
            out.append((line_number, f"invalid json: {exc.msg}"))
            continue
        if not isinstance(fields, dict):
            out.append((line_number, "invalid json: not an object"))
            continue
        out.append((line_number, _record_from_fields(fields)))
    return out


def _read_lines(source) -> list[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    if isinstance(source, io.TextIOBase):
        return source.read().splitlines()
    return [line.rstrip("\n").rstrip("\r") for line in source]


def _chunked(items: list, n_chunks: int) -> list[list]:
    if n_chunks <= 1 or len(items) <= 1:
        return [items]
    size = max(1, (len(items) + n_chunks - 1) // n_chunks)
    return [items[i:i + size] for i in range(0, len(items), size)]


def parse_transactions(source, fmt: str = "auto", workers: int = 1) -> ParseReport:
    """Parse a transaction ledger from a path, file object, or line iterable.

    Returns accepted records in input order plus a rejected-line report.
    Exact duplicates (all seven fields equal) keep the first occurrence and
    reject later ones, so re-ingesting a file is safe. Worker count never
    changes the result, only how line parsing is batched.
    """
    lines = _read_lines(source)
    if fmt == "auto":
        first = next((ln for ln in lines if ln.strip()), "")
        fmt = "jsonl" if first.lstrip().startswith("{") else "csv"
    if fmt not in ("jsonl", "csv"):
        raise ValueError(f"unknown transaction format {fmt!r}")

    results: list[tuple[int, TransactionRecord | str]] = []
    if fmt == "jsonl":
        numbered = list(enumerate(lines, start=1))
        chunks = _chunked(numbered, workers)
        if len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for part in pool.map(_parse_json_chunk, chunks):
                    results.extend(part)
        else:
            results.extend(_parse_json_chunk(chunks[0]))
    else:
        reader = csv.reader(lines)
        try:
            header = next(reader)
        except StopIteration:
            header = None
        if header is not None:
            header = [h.strip() for h in header]
            rows = [(reader.line_num, row) for row in reader]

            def parse_csv_chunk(chunk):
                out = []
                for line_number, row in chunk:
                    if not row or all(not cell.strip() for cell in row):
                        continue
                    if len(row) < len(header):
                        fields = dict(zip(header, row))
                        missing = [h for h in TRANSACTION_FIELDS if h not in fields]
                        name = missing[0] if missing else header[len(row)]
                        out.append((line_number, f"missing field {name}"))
                        continue
                    out.append((line_number, _record_from_fields(dict(zip(header, row)))))
                return out

            chunks = _chunked(rows, workers)
            if len(chunks) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    for part in pool.map(parse_csv_chunk, chunks):
                        results.extend(part)
            else:
                results.extend(parse_csv_chunk(chunks[0]))

    records: list[TransactionRecord] = []
    rejected: list[RejectedLine] = []
    seen: set[tuple] = set()
    for line_number, outcome in results:
        if isinstance(outcome, str):
            rejected.append(RejectedLine(line_number, outcome))
            continue
        key = (
            outcome.token_address, outcome.token_id, outcome.from_address,
            outcome.to_address, outcome.value_eth, outcome.block_number,
            outcome.timestamp,
        )
        if key in seen:
            rejected.append(RejectedLine(line_number, "duplicate record"))
            continue
        seen.add(key)
        records.append(outcome)
    return ParseReport(records=records, rejected=rejected)


def _format_value(value: float) -> str:
    return repr(value)


def _format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def serialize_transactions(records, destination=None, fmt: str = "jsonl") -> str | None:
    """Write records back out in an ingestible format (default JSONL).

    parse -> serialize -> parse round-trips exactly.
    """
    buf = io.StringIO()
    if fmt == "jsonl":
        for r in records:
            buf.write(json.dumps({
                "token_address": r.token_address,
                "token_id": r.token_id,
                "from_address": r.from_address,
                "to_address": r.to_address,
                "value": _format_value(r.value_eth),
                "block_number": r.block_number,
                "block_timestamp": _format_timestamp(r.timestamp),
            }))
            buf.write("\n")
    elif fmt == "csv":
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRANSACTION_FIELDS)
        for r in records:
            writer.writerow([
                r.token_address, r.token_id, r.from_address, r.to_address,
                _format_value(r.value_eth), r.block_number,
                _format_timestamp(r.timestamp),
            ])
    else:
        raise ValueError(f"unknown transaction format {fmt!r}")
    text = buf.getvalue()
    if destination is None:
        return text
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(text, encoding="utf-8")
    else:
        destination.write(text)
    return None


def write_rejected_report(rejected, destination) -> None:
    """CSV report of rejected lines: line_number,reason."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["line_number", "reason"])
    for item in rejected:
        writer.writerow([item.line_number, item.reason])
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(buf.getvalue(), encoding="utf-8")
    else:
        destination.write(buf.getvalue())


class RateTable:
    """Daily ETH/USD and gas/ETH rates, sorted by date, carry-forward lookup.

    The gas_eth column is loaded and kept available but nothing downstream
    consumes it yet.
    """

    def __init__(self, dates: list[date], eth_usd: list[float], gas_eth: list[float],
                 rejected: list[RejectedLine] | None = None):
        if len(dates) != len(eth_usd) or len(dates) != len(gas_eth):
            raise ValueError("rate columns must have equal length")
        order = sorted(range(len(dates)), key=lambda i: dates[i])
        self.dates = [dates[i] for i in order]
        self.eth_usd = [eth_usd[i] for i in order]
        self.gas_eth = [gas_eth[i] for i in order]
        self.rejected = list(rejected or [])
        for a, b in zip(self.dates, self.dates[1:]):
            if a == b:
                raise ValueError(f"duplicate rate date {a.isoformat()}")
        for r in self.eth_usd + self.gas_eth:
            if r <= 0:
                raise ValueError("rates must be positive")

    def __len__(self) -> int:
        return len(self.dates)

    def _index_for(self, day: date) -> int:
        if not self.dates:
            raise ValueError("rate unavailable: empty rate table")
        idx = bisect_right(self.dates, day) - 1
        if idx < 0:
            raise ValueError(
                f"rate unavailable for {day.isoformat()}: before earliest rate date "
                f"{self.dates[0].isoformat()}"
            )
        return idx

    def rate_on(self, day: date) -> float:
        """ETH/USD rate for a day, carrying forward over gaps."""
        return self.eth_usd[self._index_for(day)]

    def gas_on(self, day: date) -> float:
        return self.gas_eth[self._index_for(day)]


def load_rate_table(source) -> RateTable:
    """Load a date,eth_usd,gas_eth CSV. Bad rows are skipped and reported via
    RateTable.rejected; duplicate dates are an error."""
    lines = _read_lines(source)
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        return RateTable([], [], [])
    col = {name: header.index(name) for name in ("date", "eth_usd", "gas_eth")
           if name in header}
    missing = [name for name in ("date", "eth_usd", "gas_eth") if name not in col]
    if missing:
        raise ValueError(f"rate file missing columns: {', '.join(missing)}")

    dates: list[date] = []
    usd: list[float] = []
    gas: list[float] = []
    rejected: list[RejectedLine] = []
    for row in reader:
        line_number = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) <= max(col.values()):
            rejected.append(RejectedLine(line_number, "missing columns"))
            continue
        try:
            day = date.fromisoformat(row[col["date"]].strip())
        except ValueError:
            rejected.append(RejectedLine(line_number, f"invalid date {row[col['date']]!r}"))
            continue
        try:
            eth_usd = float(row[col["eth_usd"]])
            gas_eth = float(row[col["gas_eth"]])
        except ValueError:
            rejected.append(RejectedLine(line_number, "invalid rate value"))
            continue
        if not (isfinite(eth_usd) and isfinite(gas_eth)) or eth_usd <= 0 or gas_eth <= 0:
            rejected.append(RejectedLine(line_number, "non-positive rate"))
            continue
        dates.append(day)
        usd.append(eth_usd)
        gas.append(gas_eth)
    return RateTable(dates, usd, gas, rejected)


def to_usd(value_eth: float, day: date, rates: RateTable) -> float:
    """Convert an ETH amount to USD at the carried-forward daily rate."""
    if value_eth < 0:
        raise ValueError("value_eth must be non-negative")
    return value_eth * rates.rate_on(day)


def mint_events(records) -> dict[tuple[str, str], TransactionRecord]:
    """Earliest record of each (token_address, token_id), by timestamp then
    block number then input order. That first appearance is the mint."""
    mints: dict[tuple[str, str], tuple] = {}
    for ordinal, r in enumerate(records):
        key = r.token_key
        rank = (r.timestamp, r.block_number, ordinal)
        held = mints.get(key)
        if held is None or rank < held[0]:
            mints[key] = (rank, r)
    return {key: rec for key, (_, rec) in mints.items()}


_SCHEMA = """
CREATE TABLE IF NOT EXISTS transactions (
    ordinal INTEGER PRIMARY KEY,
    token_address TEXT NOT NULL,
    token_id TEXT NOT NULL,
    from_address TEXT NOT NULL,
    to_address TEXT NOT NULL,
    value_eth REAL NOT NULL,
    block_number INTEGER NOT NULL,
    block_timestamp TEXT NOT NULL
);
CREATE UNIQUE INDEX IF NOT EXISTS idx_tx_key
    ON transactions (token_address, token_id, block_number, ordinal);
"""


def save_ledger(records, db_path) -> None:
    """Persist accepted records to a single-file SQLite store (a cache;
    everything downstream also runs straight from in-memory records)."""
    conn = sqlite3.connect(str(db_path))
    try:
        conn.executescript(_SCHEMA)
        conn.execute("DELETE FROM transactions")
        conn.executemany(
            "INSERT INTO transactions VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
            [
                (i, r.token_address, r.token_id, r.from_address, r.to_address,
                 r.value_eth, r.block_number, _format_timestamp(r.timestamp))
                for i, r in enumerate(records)
            ],
        )
        conn.commit()
    finally:
        conn.close()


def load_ledger(db_path) -> list[TransactionRecord]:
    conn = sqlite3.connect(str(db_path))
    try:
        rows = conn.execute(
            "SELECT token_address, token_id, from_address, to_address, "
            "value_eth, block_number, block_timestamp "
            "FROM transactions ORDER BY ordinal"
        ).fetchall()
    finally:
        conn.close()
    return [
        TransactionRecord(
            token_address=row[0], token_id=row[1], from_address=row[2],
            to_address=row[3], value_eth=row[4], block_number=row[5],
            timestamp=_parse_timestamp(row[6]),
        )
        for row in rows
    ]


__all__ = [
    "TRANSACTION_FIELDS",
    "TransactionKind",
    "TransactionRecord",
    "RejectedLine",
    "ParseReport",
    "RateTable",
    "classify_transaction",
    "parse_transactions",
    "serialize_transactions",
    "write_rejected_report",
    "load_rate_table",
    "to_usd",
    "mint_events",
    "save_ledger",
    "load_ledger",
]
