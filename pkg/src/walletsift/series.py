"""Per-collection daily price series: EMA-7 heat baseline, true range and
14-day ATR, and the derived bull/bear and volatile/stable day flags.

Days with no sales are skipped entirely; the EMA and ATR run over trading
days only and carry across gaps.
"""

from bisect import insort
from dataclasses import dataclass
from datetime import date

from .ledger import TransactionRecord, classify_transaction, TransactionKind

EMA_ALPHA = 2.0 / (7 + 1)  # 7-day smoothing factor
ATR_WINDOW = 14


@dataclass
class CollectionDailySeries:
    token_address: str
    days: list[date]
    mean_price: list[float]
    close_price: list[float]
    ema7: list[float]
    true_range: list[float]
    atr14: list[float]
    is_bull: list[bool]
    is_volatile: list[bool]

    def __post_init__(self):
        self._index = {d: i for i, d in enumerate(self.days)}

    def index_of(self, day: date) -> int:
        try:
            return self._index[day]
        except KeyError:
            raise KeyError(
                f"{day.isoformat()} is not a trading day of {self.token_address}"
            ) from None

    def ema_on(self, day: date) -> float:
        return self.ema7[self.index_of(day)]

    def bull_on(self, day: date) -> bool:
        return self.is_bull[self.index_of(day)]

    def volatile_on(self, day: date) -> bool:
        return self.is_volatile[self.index_of(day)]


def _running_median(sorted_values: list[float]) -> float:
    n = len(sorted_values)
    mid = n // 2
    if n % 2:
        return sorted_values[mid]
    return 0.5 * (sorted_values[mid - 1] + sorted_values[mid])


def collection_daily_series(sales) -> CollectionDailySeries:
    """Build the daily series for one collection from its sale records.

    Per trading day: mean and last price, EMA-7 of the daily mean
    (ema_t = 0.25*p_t + 0.75*ema_{t-1}, seeded with the first day's mean),
    true range against the previous close, ATR as the mean of the last 14
    true ranges. A day is bull when its mean is at or above the previous
    day's EMA (first day defaults bull) and volatile when its ATR exceeds
    the running median of ATR values seen so far.
    """
    sales = list(sales)
    if not sales:
        raise ValueError("no sales: cannot build a daily series")
    token_address = sales[0].token_address
    by_day: dict[date, list[tuple]] = {}
    for ordinal, s in enumerate(sales):
        if s.token_address != token_address:
            raise ValueError("sales span multiple collections")
        if classify_transaction(s) is TransactionKind.TRANSFER:
            raise ValueError("daily series takes sales only, got a zero-value record")
        by_day.setdefault(s.day, []).append((s.timestamp, s.block_number, ordinal, s.value_eth))

    days = sorted(by_day)
    mean_price: list[float] = []
    close_price: list[float] = []
    high: list[float] = []
    low: list[float] = []
    for d in days:
        trades = sorted(by_day[d])
        prices = [t[3] for t in trades]
        mean_price.append(sum(prices) / len(prices))
        close_price.append(trades[-1][3])
        high.append(max(prices))
        low.append(min(prices))

    ema7: list[float] = []
    true_range: list[float] = []
    atr14: list[float] = []
    is_bull: list[bool] = []
    is_volatile: list[bool] = []
    atr_sorted: list[float] = []
    for i, d in enumerate(days):
        if i == 0:
            ema7.append(mean_price[0])
            true_range.append(high[0] - low[0])
            is_bull.append(True)
        else:
            ema7.append(EMA_ALPHA * mean_price[i] + (1 - EMA_ALPHA) * ema7[i - 1])
            prev_close = close_price[i - 1]
            true_range.append(max(high[i], prev_close) - min(low[i], prev_close))
            is_bull.append(mean_price[i] >= ema7[i - 1])
        window = true_range[max(0, i - ATR_WINDOW + 1):i + 1]
        atr14.append(sum(window) / len(window))
        insort(atr_sorted, atr14[i])
        is_volatile.append(atr14[i] > _running_median(atr_sorted))

    return CollectionDailySeries(
        token_address=token_address,
        days=days,
        mean_price=mean_price,
        close_price=close_price,
        ema7=ema7,
        true_range=true_range,
        atr14=atr14,
        is_bull=is_bull,
        is_volatile=is_volatile,
    )


def build_daily_series(records) -> dict[str, CollectionDailySeries]:
    """Daily series for every collection that has at least one sale."""
    sales_by_collection: dict[str, list[TransactionRecord]] = {}
    for r in records:
        if r.value_eth > 0:
            sales_by_collection.setdefault(r.token_address, []).append(r)
    return {
        addr: collection_daily_series(sales)
        for addr, sales in sales_by_collection.items()
    }


__all__ = [
    "EMA_ALPHA",
    "ATR_WINDOW",
    "CollectionDailySeries",
    "collection_daily_series",
    "build_daily_series",
]
