"""Post-clustering analysis: PCA projection for plotting, per-cluster
feature statistics, rule-based behavioral labels, and the report bundle.

Labeling runs on raw-unit profiles so rule thresholds stay readable
(an out-degree mean of literally zero, a volume above the dataset's 90th
percentile, and so on). Rules live in a small text format and can be
swapped out at run time.
"""

import csv
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import KMeansModel
from .features import FEATURE_CATEGORIES, FeatureMatrix


@dataclass
class PcaProjection:
    components: np.ndarray           # n_components x n, orthonormal rows
    explained_variance_ratio: np.ndarray
    scores: np.ndarray               # m x n_components
    mean: np.ndarray
    degenerate: np.ndarray           # True for zero-variance padding rows

    @property
    def cumulative_ratio(self) -> float:
        return float(self.explained_variance_ratio.sum())


def pca_fit(matrix, n_components: int = 2) -> PcaProjection:
    """Principal components of the centered data via SVD.

    Components are ordered by explained variance; each row is sign-fixed so
    its largest-magnitude loading is positive. Asking for more components
    than the data's rank pads with zero-variance directions flagged in
    `degenerate`.
    """
    x = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=float)
    m, n = x.shape
    if n_components > min(m, n):
        raise ValueError(f"n_components={n_components} exceeds min(m, n)={min(m, n)}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    total_var = float((singular ** 2).sum())
    components = vt[:n_components].copy()
    if total_var <= 0:
        ratios = np.zeros(n_components)
        degenerate = np.ones(n_components, dtype=bool)
    else:
        ratios = (singular[:n_components] ** 2) / total_var
        scale = singular.max()
        degenerate = singular[:n_components] <= scale * max(m, n) * np.finfo(float).eps
    for row in components:
        pivot = int(np.abs(row).argmax())
        if row[pivot] < 0:
            row *= -1.0
    scores = centered @ components.T
    return PcaProjection(
        components=components,
        explained_variance_ratio=ratios,
        scores=scores,
        mean=mean,
        degenerate=degenerate,
    )


def pca_reconstruct(projection: PcaProjection) -> np.ndarray:
    return projection.scores @ projection.components + projection.mean


@dataclass
class FeatureStats:
    mean: float
    sd: float
    min: float
    q1: float
    median: float
    q3: float
    max: float
    outlier_count: int


@dataclass
class ClusterProfile:
    cluster_id: int
    size: int
    stats: dict[str, FeatureStats]
    label: str = ""


def _feature_stats(values: np.ndarray) -> FeatureStats:
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = int(np.count_nonzero((values < lo) | (values > hi)))
    return FeatureStats(
        mean=float(values.mean()),
        sd=float(values.std()),
        min=float(values.min()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        max=float(values.max()),
        outlier_count=outliers,
    )


def cluster_profiles(raw_matrix: FeatureMatrix, model: KMeansModel) -> list[ClusterProfile]:
    """Per-cluster raw-unit statistics for every feature: mean, sd, five
    number summary, and the count of points beyond 1.5 IQR."""
    if raw_matrix.values.shape[0] != model.assignments.shape[0]:
        raise ValueError("matrix and model row counts differ")
    profiles = []
    for cluster in range(model.k):
        mask = model.assignments == cluster
        sub = raw_matrix.values[mask]
        stats = {
            name: _feature_stats(sub[:, i])
            for i, name in enumerate(raw_matrix.feature_names)
        }
        profiles.append(ClusterProfile(
            cluster_id=cluster,
            size=int(mask.sum()),
            stats=stats,
        ))
    return profiles


# ---------------------------------------------------------------------------
# labeling rules

_COMPARATORS = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
}

_CONDITION_RE = re.compile(
    r"^(?P<lhs>size|[a-z_][a-z0-9_]*\.(?:mean|median|min|max|sd))\s*"
    r"(?P<op>==|!=|<=|>=|<|>)\s*"
    r"(?P<rhs>.+)$"
)
_PCTL_RE = re.compile(r"^pctl\(\s*([a-z_][a-z0-9_]*)\s*,\s*([0-9.]+)\s*\)$")
_MEAN_RE = re.compile(r"^mean\(\s*([a-z_][a-z0-9_]*)\s*\)$")
_RULE_RE = re.compile(
    r"^rule\s+(?P<name>[a-zA-Z0-9_-]+)\s+priority=(?P<priority>-?\d+)\s+label=(?P<label>[a-zA-Z0-9_-]+)\s*$"
)


@dataclass
class Condition:
    lhs_feature: str | None   # None means cluster size
    lhs_stat: str | None
    op: str
    rhs_kind: str             # "number" | "pctl" | "mean"
    rhs_feature: str | None
    rhs_value: float


@dataclass
class LabelRule:
    name: str
    label: str
    priority: int
    conditions: list[Condition] = field(default_factory=list)


DEFAULT_RULES_TEXT = """\
# Cluster labeling rules, applied to raw-unit cluster profiles.
# Highest priority wins; a cluster matching nothing is labeled "general".
# Condition left sides are `size` or `<feature>.<stat>`; right sides are a
# number, `pctl(<feature>, <q>)` for the dataset's per-wallet percentile,
# or `mean(<feature>)` for the dataset mean.

rule institutional priority=100 label=institutional
  size <= 10
  in_degree.mean > pctl(in_degree, 99.9)
  out_degree.mean > pctl(out_degree, 99.9)

rule hodler priority=90 label=hodler
  out_degree.mean == 0

rule wash_ring priority=80 label=wash_candidate
  in_degree.mean > pctl(in_degree, 90)
  out_degree.mean > pctl(out_degree, 90)
  transfer_ratio.mean > pctl(transfer_ratio, 90)
  max_trans_per_day.mean > pctl(max_trans_per_day, 90)
  buy_atr.mean < 0

rule wash_mature priority=75 label=wash_candidate
  total_in_usd.mean > pctl(total_in_usd, 90)
  total_out_usd.mean > pctl(total_out_usd, 90)
  in_interval_days.mean > pctl(in_interval_days, 90)
  out_interval_days.mean > pctl(out_interval_days, 90)
  avg_minted_days.mean > pctl(avg_minted_days, 90)

rule collector priority=70 label=collector
  total_in_usd.mean > pctl(total_in_usd, 90)
  total_out_usd.mean > pctl(total_out_usd, 90)
  relative_sell.mean > mean(relative_sell)

rule inactive priority=60 label=inactive
  in_interval_days.mean > pctl(in_interval_days, 90)
  diff_interval_days.mean > pctl(diff_interval_days, 90)
"""


def parse_rules(text: str, feature_names) -> list[LabelRule]:
    """Parse the rules format; unknown features or stats fail loudly."""
    known = set(feature_names)
    rules: list[LabelRule] = []
    current: LabelRule | None = None
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        header = _RULE_RE.match(line.strip())
        if header and not raw.startswith((" ", "\t")):
            current = LabelRule(
                name=header.group("name"),
                label=header.group("label"),
                priority=int(header.group("priority")),
            )
            rules.append(current)
            continue
        if current is None:
            raise ValueError(f"rules line {line_number}: condition before any rule header")
        m = _CONDITION_RE.match(line.strip())
        if not m:
            raise ValueError(f"rules line {line_number}: cannot parse condition {line.strip()!r}")
        lhs = m.group("lhs")
        if lhs == "size":
            lhs_feature, lhs_stat = None, None
        else:
            lhs_feature, lhs_stat = lhs.split(".", 1)
            if lhs_feature not in known:
                raise ValueError(f"rules line {line_number}: unknown feature {lhs_feature!r}")
        rhs = m.group("rhs").strip()
        pctl = _PCTL_RE.match(rhs)
        mean = _MEAN_RE.match(rhs)
        if pctl:
            if pctl.group(1) not in known:
                raise ValueError(f"rules line {line_number}: unknown feature {pctl.group(1)!r}")
            cond = Condition(lhs_feature, lhs_stat, m.group("op"),
                             "pctl", pctl.group(1), float(pctl.group(2)))
        elif mean:
            if mean.group(1) not in known:
                raise ValueError(f"rules line {line_number}: unknown feature {mean.group(1)!r}")
            cond = Condition(lhs_feature, lhs_stat, m.group("op"),
                             "mean", mean.group(1), 0.0)
        else:
            try:
                cond = Condition(lhs_feature, lhs_stat, m.group("op"),
                                 "number", None, float(rhs))
            except ValueError:
                raise ValueError(f"rules line {line_number}: bad right-hand side {rhs!r}") from None
        current.conditions.append(cond)
    for rule in rules:
        if not rule.conditions:
            raise ValueError(f"rule {rule.name!r} has no conditions")
    return rules


def default_rules(feature_names) -> list[LabelRule]:
    return parse_rules(DEFAULT_RULES_TEXT, feature_names)


class DatasetContext:
    """Per-wallet percentile and mean lookups over the raw feature matrix."""

    def __init__(self, raw_matrix: FeatureMatrix):
        self._matrix = raw_matrix
        self._pctl_cache: dict[tuple[str, float], float] = {}
        self._mean_cache: dict[str, float] = {}

    def percentile(self, feature: str, q: float) -> float:
        key = (feature, q)
        if key not in self._pctl_cache:
            self._pctl_cache[key] = float(np.percentile(self._matrix.column(feature), q))
        return self._pctl_cache[key]

    def mean(self, feature: str) -> float:
        if feature not in self._mean_cache:
            self._mean_cache[feature] = float(self._matrix.column(feature).mean())
        return self._mean_cache[feature]


def _condition_holds(cond: Condition, profile: ClusterProfile, context: DatasetContext) -> bool:
    if cond.lhs_feature is None:
        lhs = float(profile.size)
    else:
        lhs = getattr(profile.stats[cond.lhs_feature], cond.lhs_stat)
    if cond.rhs_kind == "number":
        rhs = cond.rhs_value
    elif cond.rhs_kind == "pctl":
        rhs = context.percentile(cond.rhs_feature, cond.rhs_value)
    else:
        rhs = context.mean(cond.rhs_feature)
    return _COMPARATORS[cond.op](lhs, rhs)


def label_clusters(profiles: list[ClusterProfile], raw_matrix: FeatureMatrix,
                   rules: list[LabelRule] | None = None) -> list[ClusterProfile]:
    """Attach a behavioral label to each profile: the highest-priority rule
    whose conditions all hold, or "general" when nothing matches."""
    if rules is None:
        rules = default_rules(raw_matrix.feature_names)
    for rule in rules:
        for cond in rule.conditions:
            for feat in (cond.lhs_feature, cond.rhs_feature):
                if feat is not None and feat not in raw_matrix.feature_names:
                    raise ValueError(f"rule {rule.name!r} references unknown feature {feat!r}")
    context = DatasetContext(raw_matrix)
    ordered = sorted(rules, key=lambda r: -r.priority)
    for profile in profiles:
        profile.label = "general"
        for rule in ordered:
            if all(_condition_holds(c, profile, context) for c in rule.conditions):
                profile.label = rule.label
                break
    return profiles


# ---------------------------------------------------------------------------
# report bundle

WASH_KEY_FEATURES = (
    "in_degree", "out_degree", "transfer_ratio", "max_trans_per_day",
    "total_in_usd", "total_out_usd", "avg_minted_days",
)


@dataclass
class ReportBundle:
    master: dict
    pca_scores_csv: str
    radar_csv: str
    boxplot_csv: str
    wash_candidates_csv: str


def _category_of(feature: str) -> str:
    for category, names in FEATURE_CATEGORIES.items():
        if feature in names:
            return category
    return "other"


def build_report(raw_matrix: FeatureMatrix, model: KMeansModel,
                 profiles: list[ClusterProfile], projection: PcaProjection,
                 eda: dict | None = None, k_selection=None,
                 cross_validation=None) -> ReportBundle:
    """Assemble the master JSON report and the plot-data CSV exports."""
    m = len(raw_matrix.wallets)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["wallet", "pc1", "pc2", "cluster"])
    for i, wallet in enumerate(raw_matrix.wallets):
        pc1 = repr(float(projection.scores[i, 0]))
        pc2 = repr(float(projection.scores[i, 1])) if projection.scores.shape[1] > 1 else "0.0"
        writer.writerow([wallet, pc1, pc2, int(model.assignments[i])])
    pca_scores_csv = buf.getvalue()

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cluster", "category", "feature", "mean"])
    for profile in profiles:
        for name in raw_matrix.feature_names:
            writer.writerow([profile.cluster_id, _category_of(name), name,
                             repr(profile.stats[name].mean)])
    radar_csv = buf.getvalue()

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cluster", "feature", "min", "q1", "median", "q3", "max", "outliers"])
    for profile in profiles:
        for name in raw_matrix.feature_names:
            s = profile.stats[name]
            writer.writerow([profile.cluster_id, name, repr(s.min), repr(s.q1),
                             repr(s.median), repr(s.q3), repr(s.max), s.outlier_count])
    boxplot_csv = buf.getvalue()

    wash_clusters = {p.cluster_id for p in profiles if p.label == "wash_candidate"}
    label_by_cluster = {p.cluster_id: p.label for p in profiles}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    key_idx = [raw_matrix.feature_names.index(n) for n in WASH_KEY_FEATURES
               if n in raw_matrix.feature_names]
    key_names = [raw_matrix.feature_names[i] for i in key_idx]
    writer.writerow(["wallet", "cluster", "label"] + key_names)
    wash_count = 0
    for i, wallet in enumerate(raw_matrix.wallets):
        cluster = int(model.assignments[i])
        if cluster in wash_clusters:
            wash_count += 1
            writer.writerow([wallet, cluster, label_by_cluster[cluster]]
                            + [repr(float(raw_matrix.values[i, j])) for j in key_idx])
    wash_candidates_csv = buf.getvalue()

    master = {
        "wallet_count": m,
        "k": model.k,
        "seed": model.seed,
        "clusters": [
            {
                "cluster_id": p.cluster_id,
                "size": p.size,
                "label": p.label,
                "feature_means": {name: p.stats[name].mean
                                  for name in raw_matrix.feature_names},
            }
            for p in profiles
        ],
        "wash": {
            "count": wash_count,
            "percentage": (100.0 * wash_count / m) if m else 0.0,
            "clusters": sorted(wash_clusters),
        },
        "pca": {
            "explained_variance_ratio": projection.explained_variance_ratio.tolist(),
            "cumulative_ratio": projection.cumulative_ratio,
        },
    }
    if eda is not None:
        master["eda"] = eda
    if k_selection is not None:
        master["k_selection"] = {
            "ks": k_selection.ks,
            "wcss": k_selection.wcss,
            "dbi": k_selection.dbi,
            "silhouette": k_selection.silhouette,
            "knee_k": k_selection.knee_k,
            "chosen_k": k_selection.chosen_k,
        }
    if cross_validation is not None:
        master["cross_validation"] = {
            "rows": [
                {"split": r.split, "train_sse": r.train_sse, "test_sse": r.test_sse,
                 "train_dbi": r.train_dbi, "test_dbi": r.test_dbi}
                for r in cross_validation.rows
            ],
            "summary": cross_validation.summary,
        }
    return ReportBundle(
        master=master,
        pca_scores_csv=pca_scores_csv,
        radar_csv=radar_csv,
        boxplot_csv=boxplot_csv,
        wash_candidates_csv=wash_candidates_csv,
    )


def write_report(bundle: ReportBundle, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in (
        ("report.json", json.dumps(bundle.master, indent=2, sort_keys=True) + "\n"),
        ("pca_scores.csv", bundle.pca_scores_csv),
        ("radar.csv", bundle.radar_csv),
        ("boxplot.csv", bundle.boxplot_csv),
        ("wash_candidates.csv", bundle.wash_candidates_csv),
    ):
        path = out_dir / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written


__all__ = [
    "PcaProjection",
    "pca_fit",
    "pca_reconstruct",
    "FeatureStats",
    "ClusterProfile",
    "cluster_profiles",
    "Condition",
    "LabelRule",
    "DEFAULT_RULES_TEXT",
    "parse_rules",
    "default_rules",
    "DatasetContext",
    "label_clusters",
    "ReportBundle",
    "build_report",
    "write_report",
    "WASH_KEY_FEATURES",
]
