"""Per-wallet behavioral features from a transaction ledger.

26 features in three groups:
  network  - degree counts and unique-counterparty ratios over the directed
             transaction multigraph (transfers included)
  monetary - USD volume statistics, transfer-sourced proceeds, per-token
             profit ratio, transfer share, price relative to the collection
             EMA-7
  temporal - inter-transaction intervals, per-active-day counts, days since
             mint, bull/bear and volatile/stable activity balances

Conventions applied throughout: a feature whose defining event set is empty
is 0; standard deviations are population (divide by n) and 0 below two
samples; buys/sells mean positive-value sales with the wallet as buyer or
seller; in/out-transactions include zero-value transfers.
"""

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from .ledger import RateTable, TransactionRecord, mint_events
from .series import CollectionDailySeries, build_daily_series

FEATURE_NAMES = (
    "in_degree",
    "out_degree",
    "unique_in_ratio",
    "unique_out_ratio",
    "total_in_usd",
    "total_out_usd",
    "avg_in_usd",
    "avg_out_usd",
    "sd_in_usd",
    "sd_out_usd",
    "profit_transfers_usd",
    "profit_ratio",
    "transfer_ratio",
    "relative_sell",
    "relative_buy",
    "in_interval_days",
    "out_interval_days",
    "diff_interval_days",
    "max_trans_per_day",
    "avg_trans_per_day",
    "sd_trans_per_day",
    "avg_minted_days",
    "market_trend_buy",
    "market_trend_sell",
    "buy_atr",
    "sell_atr",
)

NETWORK_FEATURES = FEATURE_NAMES[0:4]
MONETARY_FEATURES = FEATURE_NAMES[4:15]
TEMPORAL_FEATURES = FEATURE_NAMES[15:26]

FEATURE_CATEGORIES = {
    "network": NETWORK_FEATURES,
    "monetary": MONETARY_FEATURES,
    "temporal": TEMPORAL_FEATURES,
}

COUNT_FEATURES = ("in_degree", "out_degree", "max_trans_per_day")

SECONDS_PER_DAY = 86400.0


@dataclass
class WalletFeatures:
    wallet: str
    in_degree: float = 0.0
    out_degree: float = 0.0
    unique_in_ratio: float = 0.0
    unique_out_ratio: float = 0.0
    total_in_usd: float = 0.0
    total_out_usd: float = 0.0
    avg_in_usd: float = 0.0
    avg_out_usd: float = 0.0
    sd_in_usd: float = 0.0
    sd_out_usd: float = 0.0
    profit_transfers_usd: float = 0.0
    profit_ratio: float = 0.0
    transfer_ratio: float = 0.0
    relative_sell: float = 0.0
    relative_buy: float = 0.0
    in_interval_days: float = 0.0
    out_interval_days: float = 0.0
    diff_interval_days: float = 0.0
    max_trans_per_day: float = 0.0
    avg_trans_per_day: float = 0.0
    sd_trans_per_day: float = 0.0
    avg_minted_days: float = 0.0
    market_trend_buy: float = 0.0
    market_trend_sell: float = 0.0
    buy_atr: float = 0.0
    sell_atr: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=float)


class _Acc:
    """Per-wallet accumulator filled by one chronological ledger pass."""

    __slots__ = (
        "in_count", "out_count", "in_parties", "out_parties",
        "in_usd", "out_usd", "profit_transfers", "ratio_sum", "ratio_n",
        "transfers", "records", "rel_sell_sum", "rel_sell_n",
        "rel_buy_sum", "rel_buy_n", "in_times", "out_times", "day_counts",
        "minted_sum", "minted_n",
        "buys_bull", "buys_bear", "sells_bull", "sells_bear",
        "buys_vol", "buys_stable", "sells_vol", "sells_stable",
    )

    def __init__(self):
        self.in_count = 0
        self.out_count = 0
        self.in_parties: set[str] = set()
        self.out_parties: set[str] = set()
        self.in_usd: list[float] = []
        self.out_usd: list[float] = []
        self.profit_transfers = 0.0
        self.ratio_sum = 0.0
        self.ratio_n = 0
        self.transfers = 0
        self.records = 0
        self.rel_sell_sum = 0.0
        self.rel_sell_n = 0
        self.rel_buy_sum = 0.0
        self.rel_buy_n = 0
        self.in_times: list[float] = []
        self.out_times: list[float] = []
        self.day_counts: dict[date, int] = {}
        self.minted_sum = 0
        self.minted_n = 0
        self.buys_bull = 0
        self.buys_bear = 0
        self.sells_bull = 0
        self.sells_bear = 0
        self.buys_vol = 0
        self.buys_stable = 0
        self.sells_vol = 0
        self.sells_stable = 0


def _chronological(records) -> list[tuple[int, TransactionRecord]]:
    return sorted(enumerate(records), key=lambda item: (item[1].timestamp, item[1].block_number, item[0]))


def _scan(records, rates: RateTable | None,
          series: dict[str, CollectionDailySeries] | None,
          mints: dict[tuple[str, str], date] | None) -> dict[str, _Acc]:
    accs: dict[str, _Acc] = {}
    rate_cache: dict[date, float] = {}
    buy_stacks: dict[tuple[str, str, str], list[float]] = {}
    acquired_by_transfer: dict[tuple[str, str, str], bool] = {}

    def acc_for(wallet: str) -> _Acc:
        acc = accs.get(wallet)
        if acc is None:
            acc = accs[wallet] = _Acc()
        return acc

    for _, r in _chronological(records):
        seller = acc_for(r.from_address)
        buyer = acc_for(r.to_address) if r.to_address != r.from_address else seller
        day = r.day
        is_sale = r.value_eth > 0
        epoch = r.timestamp.timestamp()

        usd = 0.0
        if is_sale and rates is not None:
            rate = rate_cache.get(day)
            if rate is None:
                rate = rate_cache[day] = rates.rate_on(day)
            usd = r.value_eth * rate

        col = None
        if is_sale and series is not None:
            col = series.get(r.token_address)

        # outgoing side
        seller.out_count += 1
        seller.out_parties.add(r.to_address)
        seller.out_times.append(epoch)
        if is_sale:
            if rates is not None:
                seller.out_usd.append(usd)
                token = (r.from_address, r.token_address, r.token_id)
                if acquired_by_transfer.get(token):
                    seller.profit_transfers += usd
                stack = buy_stacks.get(token)
                if stack:
                    bought = stack.pop()
                    seller.ratio_sum += (usd - bought) / bought
                    seller.ratio_n += 1
            if col is not None:
                seller.rel_sell_sum += r.value_eth / col.ema_on(day)
                seller.rel_sell_n += 1
                if col.bull_on(day):
                    seller.sells_bull += 1
                else:
                    seller.sells_bear += 1
                if col.volatile_on(day):
                    seller.sells_vol += 1
                else:
                    seller.sells_stable += 1

        # incoming side
        buyer.in_count += 1
        buyer.in_parties.add(r.from_address)
        buyer.in_times.append(epoch)
        token = (r.to_address, r.token_address, r.token_id)
        if is_sale:
            acquired_by_transfer[token] = False
            if rates is not None:
                buyer.in_usd.append(usd)
                buy_stacks.setdefault(token, []).append(usd)
            if col is not None:
                buyer.rel_buy_sum += r.value_eth / col.ema_on(day)
                buyer.rel_buy_n += 1
                if col.bull_on(day):
                    buyer.buys_bull += 1
                else:
                    buyer.buys_bear += 1
                if col.volatile_on(day):
                    buyer.buys_vol += 1
                else:
                    buyer.buys_stable += 1
        else:
            acquired_by_transfer[token] = True

        # whole-record bookkeeping, once per involved wallet
        for acc in ({seller, buyer} if buyer is not seller else (seller,)):
            acc.records += 1
            if not is_sale:
                acc.transfers += 1
            acc.day_counts[day] = acc.day_counts.get(day, 0) + 1
            if mints is not None:
                acc.minted_sum += (day - mints[(r.token_address, r.token_id)]).days
                acc.minted_n += 1

    return accs


def _mean_sd(values: list[float]) -> tuple[float, float, float]:
    """(total, mean, population sd); zeros when under one/two samples."""
    n = len(values)
    if n == 0:
        return 0.0, 0.0, 0.0
    total = math.fsum(values)
    mean = total / n
    if n < 2:
        return total, mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return total, mean, math.sqrt(var)


def _interval_mean(times: list[float]) -> float:
    if len(times) < 2:
        return 0.0
    times = sorted(times)
    gaps = [(b - a) / SECONDS_PER_DAY for a, b in zip(times, times[1:])]
    return math.fsum(gaps) / len(gaps)


def _balance(pos: int, neg: int) -> float:
    total = pos + neg
    return (pos - neg) / total if total else 0.0


def _finalize(wallet: str, acc: _Acc) -> WalletFeatures:
    total_in, avg_in, sd_in = _mean_sd(acc.in_usd)
    total_out, avg_out, sd_out = _mean_sd(acc.out_usd)
    counts = list(acc.day_counts.values())
    _, avg_per_day, sd_per_day = _mean_sd(counts)
    in_interval = _interval_mean(acc.in_times)
    out_interval = _interval_mean(acc.out_times)
    return WalletFeatures(
        wallet=wallet,
        in_degree=float(acc.in_count),
        out_degree=float(acc.out_count),
        unique_in_ratio=len(acc.in_parties) / acc.in_count if acc.in_count else 0.0,
        unique_out_ratio=len(acc.out_parties) / acc.out_count if acc.out_count else 0.0,
        total_in_usd=total_in,
        total_out_usd=total_out,
        avg_in_usd=avg_in,
        avg_out_usd=avg_out,
        sd_in_usd=sd_in,
        sd_out_usd=sd_out,
        profit_transfers_usd=acc.profit_transfers,
        profit_ratio=acc.ratio_sum / acc.ratio_n if acc.ratio_n else 0.0,
        transfer_ratio=acc.transfers / acc.records if acc.records else 0.0,
        relative_sell=acc.rel_sell_sum / acc.rel_sell_n if acc.rel_sell_n else 0.0,
        relative_buy=acc.rel_buy_sum / acc.rel_buy_n if acc.rel_buy_n else 0.0,
        in_interval_days=in_interval,
        out_interval_days=out_interval,
        diff_interval_days=in_interval - out_interval,
        max_trans_per_day=float(max(counts)) if counts else 0.0,
        avg_trans_per_day=avg_per_day,
        sd_trans_per_day=sd_per_day,
        avg_minted_days=acc.minted_sum / acc.minted_n if acc.minted_n else 0.0,
        market_trend_buy=_balance(acc.buys_bull, acc.buys_bear),
        market_trend_sell=_balance(acc.sells_bull, acc.sells_bear),
        buy_atr=_balance(acc.buys_vol, acc.buys_stable),
        sell_atr=_balance(acc.sells_vol, acc.sells_stable),
    )


def compute_wallet_features(records, rates: RateTable, workers: int = 1) -> list[WalletFeatures]:
    """Full 26-feature profile for every wallet in the ledger, sorted by
    wallet address. Deterministic for a given ledger regardless of workers."""
    records = list(records)
    series = build_daily_series(records)
    mints = {key: rec.day for key, rec in mint_events(records).items()}
    accs = _scan(records, rates, series, mints)
    wallets = sorted(accs)
    if workers > 1 and len(wallets) > 1:
        size = max(1, (len(wallets) + workers - 1) // workers)
        chunks = [wallets[i:i + size] for i in range(0, len(wallets), size)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(lambda ws: [_finalize(w, accs[w]) for w in ws], chunks)
            out: list[WalletFeatures] = []
            for part in parts:
                out.extend(part)
            return out
    return [_finalize(w, accs[w]) for w in wallets]


def network_features(records) -> dict[str, dict[str, float]]:
    """Degree counts and unique-counterparty ratios per wallet."""
    accs = _scan(list(records), None, None, None)
    out = {}
    for wallet in sorted(accs):
        feats = _finalize(wallet, accs[wallet])
        out[wallet] = {name: getattr(feats, name) for name in NETWORK_FEATURES}
    return out


def monetary_features(records, rates: RateTable,
                      series: dict[str, CollectionDailySeries] | None = None
                      ) -> dict[str, dict[str, float]]:
    """USD volume statistics, profit measures, transfer share, and
    EMA-relative prices per wallet."""
    records = list(records)
    if series is None:
        series = build_daily_series(records)
    accs = _scan(records, rates, series, None)
    out = {}
    for wallet in sorted(accs):
        feats = _finalize(wallet, accs[wallet])
        out[wallet] = {name: getattr(feats, name) for name in MONETARY_FEATURES}
    return out


def temporal_features(records,
                      series: dict[str, CollectionDailySeries] | None = None,
                      mints: dict[tuple[str, str], date] | None = None
                      ) -> dict[str, dict[str, float]]:
    """Interval, per-day activity, mint-age, and market-regime balances
    per wallet."""
    records = list(records)
    if series is None:
        series = build_daily_series(records)
    if mints is None:
        mints = {key: rec.day for key, rec in mint_events(records).items()}
    accs = _scan(records, None, series, mints)
    out = {}
    for wallet in sorted(accs):
        feats = _finalize(wallet, accs[wallet])
        out[wallet] = {name: getattr(feats, name) for name in TEMPORAL_FEATURES}
    return out


@dataclass
class FeatureMatrix:
    wallets: list[str]
    feature_names: list[str]
    values: np.ndarray
    standardized: bool = False
    column_means: np.ndarray | None = None
    column_sds: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]


def assemble_feature_matrix(features: list[WalletFeatures]) -> FeatureMatrix:
    """Stack wallet profiles into an m x 26 matrix, rows sorted by wallet
    address, columns in the canonical feature order."""
    if not features:
        raise ValueError("no wallets")
    ordered = sorted(features, key=lambda f: f.wallet)
    values = np.vstack([f.as_array() for f in ordered])
    return FeatureMatrix(
        wallets=[f.wallet for f in ordered],
        feature_names=list(FEATURE_NAMES),
        values=values,
    )


def standardize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Z-score every column (population sd). Constant columns become all
    zeros. Original column means/sds are kept for reporting in raw units."""
    values = matrix.values
    means = values.mean(axis=0)
    sds = values.std(axis=0)
    constant = sds <= 1e-12 * np.maximum(1.0, np.abs(means))
    safe = np.where(constant, 1.0, sds)
    z = (values - means) / safe
    z[:, constant] = 0.0
    return FeatureMatrix(
        wallets=list(matrix.wallets),
        feature_names=list(matrix.feature_names),
        values=z,
        standardized=True,
        column_means=means,
        column_sds=sds,
    )


@dataclass
class PruneResult:
    retained: list[str]
    dropped: list[str]
    correlation: np.ndarray


def prune_correlated(matrix: FeatureMatrix, threshold: float = 0.9) -> PruneResult:
    """Drop features that correlate above the threshold with an earlier
    feature of the same category; the full correlation matrix comes along
    for reporting. Correlation is only compared within each category."""
    if not matrix.standardized:
        raise ValueError("prune_correlated expects a standardized matrix")
    names = matrix.feature_names
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(matrix.values, rowvar=False)
    corr = np.nan_to_num(corr, nan=0.0)
    np.fill_diagonal(corr, 1.0)

    index = {name: i for i, name in enumerate(names)}
    retained: list[str] = []
    dropped: list[str] = []
    for category_names in FEATURE_CATEGORIES.values():
        kept_in_category: list[str] = []
        for name in category_names:
            if name not in index:
                continue
            i = index[name]
            if any(abs(corr[i, index[other]]) > threshold for other in kept_in_category):
                dropped.append(name)
            else:
                kept_in_category.append(name)
                retained.append(name)
    retained.sort(key=index.get)
    dropped.sort(key=index.get)
    return PruneResult(retained=retained, dropped=dropped, correlation=corr)


def select_features(matrix: FeatureMatrix, names: list[str]) -> FeatureMatrix:
    """Column subset of a matrix, preserving order of the given names."""
    idx = [matrix.feature_names.index(n) for n in names]
    return FeatureMatrix(
        wallets=list(matrix.wallets),
        feature_names=list(names),
        values=matrix.values[:, idx].copy(),
        standardized=matrix.standardized,
        column_means=matrix.column_means[idx] if matrix.column_means is not None else None,
        column_sds=matrix.column_sds[idx] if matrix.column_sds is not None else None,
    )


def save_feature_matrix(matrix: FeatureMatrix, destination) -> None:
    """CSV interchange: header wallet,<feature names>, one row per wallet."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["wallet"] + list(matrix.feature_names))
    for wallet, row in zip(matrix.wallets, matrix.values):
        writer.writerow([wallet] + [repr(float(v)) for v in row])
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(buf.getvalue(), encoding="utf-8")
    else:
        destination.write(buf.getvalue())


def load_feature_matrix(source) -> FeatureMatrix:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if not header or header[0] != "wallet":
        raise ValueError("feature matrix CSV must start with a wallet column")
    names = header[1:]
    wallets: list[str] = []
    rows: list[list[float]] = []
    for row in reader:
        if not row:
            continue
        wallets.append(row[0])
        rows.append([float(v) for v in row[1:]])
    if not wallets:
        raise ValueError("no wallets")
    return FeatureMatrix(wallets=wallets, feature_names=names,
                         values=np.array(rows, dtype=float))


def save_correlation_csv(corr: np.ndarray, names: list[str], destination) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["feature"] + list(names))
    for name, row in zip(names, corr):
        writer.writerow([name] + [repr(float(v)) for v in row])
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(buf.getvalue(), encoding="utf-8")
    else:
        destination.write(buf.getvalue())


__all__ = [
    "FEATURE_NAMES",
    "NETWORK_FEATURES",
    "MONETARY_FEATURES",
    "TEMPORAL_FEATURES",
    "FEATURE_CATEGORIES",
    "WalletFeatures",
    "FeatureMatrix",
    "PruneResult",
    "compute_wallet_features",
    "network_features",
    "monetary_features",
    "temporal_features",
    "assemble_feature_matrix",
    "standardize",
    "prune_correlated",
    "select_features",
    "save_feature_matrix",
    "load_feature_matrix",
    "save_correlation_csv",
]
