"""Command-line pipeline orchestration.

Subcommands: synth | ingest | eda | features | cluster | analyze | pipeline.
Every stage writes its artifacts under the output directory and is skipped
on reruns when its inputs and the relevant config are unchanged (content
hash stamps under <out>/.cache/). Logs go to stderr, data only to files.

All randomness flows from the single --seed: each stage derives its own
seed as sha256("<seed>:<stage>") reduced to 63 bits, so stages stay
independent and reruns are reproducible.
"""

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    build_report,
    cluster_profiles,
    default_rules,
    label_clusters,
    parse_rules,
    pca_fit,
    write_report,
)
from .clustering import (
    CrossValidationReport,
    CrossValidationRow,
    KMeansModel,
    KSelectionReport,
    cross_validate,
    kmeans_fit,
    save_model,
    select_k,
    wcss,
)
from .features import (
    assemble_feature_matrix,
    compute_wallet_features,
    load_feature_matrix,
    prune_correlated,
    save_correlation_csv,
    save_feature_matrix,
    select_features,
    standardize,
)
from .ledger import (
    load_ledger,
    load_rate_table,
    parse_transactions,
    save_ledger,
    write_rejected_report,
)
from .screening import (
    benford_chi_squared,
    first_digit_distribution,
    round_price_histogram,
    tail_exponent,
    FIRST_DIGIT_EXPECTED,
)
from .synth import (
    Archetype,
    MarketParams,
    default_config,
    generate_market,
    keystone_configs,
    write_ledger,
)

log = logging.getLogger("walletsift")


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass
class PipelineConfig:
    transactions: str | None = None
    rates: str | None = None
    out: str = "out"
    seed: int | None = None
    k_range: list[int] = field(default_factory=lambda: [2, 10])
    k: int | None = None
    correlation_threshold: float = 0.9
    silhouette_subsample: int = 2000
    cv_splits: int = 10
    rules: str | None = None
    workers: int = 1
    max_price: int = 80
    tail_fraction: float = 0.05
    max_iter: int = 300
    restarts: int = 5
    duration_days: int = 140
    archetypes: list[dict] = field(default_factory=list)
    market: dict = field(default_factory=dict)
    format: str = "csv"

    def validate(self, need_seed: bool = True) -> None:
        if need_seed and self.seed is None:
            raise ValueError("seed is required (there is no wall-clock default)")
        if len(self.k_range) != 2 or self.k_range[0] >= self.k_range[1]:
            raise ValueError(f"k_range must be [lo, hi] with lo < hi, got {self.k_range}")
        if self.k_range[0] < 2:
            raise ValueError("k_range must start at 2 or above")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not (0 < self.correlation_threshold <= 1):
            raise ValueError("correlation_threshold must be in (0, 1]")

    def ks(self) -> list[int]:
        return list(range(self.k_range[0], self.k_range[1] + 1))


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValueError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {path} is not valid JSON: {exc.msg}") from None


def stage_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 63)


class StageRunner:
    """Content-hash cache around stage functions; failed stages clean up
    their partial outputs."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.cache_dir = out_dir / ".cache"

    def _fingerprint(self, stage: str, inputs: list[Path], config_subset: dict) -> str:
        h = hashlib.sha256()
        h.update(stage.encode())
        h.update(json.dumps(config_subset, sort_keys=True, default=str).encode())
        for path in inputs:
            h.update(str(path.name).encode())
            try:
                h.update(path.read_bytes())
            except FileNotFoundError:
                raise StageError(stage, f"missing input file: {path}") from None
        return h.hexdigest()

    def run(self, stage: str, inputs: list, outputs: list, config_subset: dict, fn) -> bool:
        """Returns True when the stage actually ran, False when cached."""
        inputs = [Path(p) for p in inputs]
        outputs = [Path(p) for p in outputs]
        stamp = self.cache_dir / f"{stage}.hash"
        fingerprint = self._fingerprint(stage, inputs, config_subset)
        if stamp.exists() and stamp.read_text() == fingerprint and all(p.exists() for p in outputs):
            log.info("stage %s: cached", stage)
            return False
        log.info("stage %s: running", stage)
        try:
            fn()
        except StageError:
            self._cleanup(outputs, stamp)
            raise
        except Exception as exc:
            self._cleanup(outputs, stamp)
            raise StageError(stage, str(exc)) from exc
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        stamp.write_text(fingerprint)
        return True

    @staticmethod
    def _cleanup(outputs: list[Path], stamp: Path):
        for path in outputs:
            if path.exists():
                path.unlink()
        if stamp.exists():
            stamp.unlink()


# ---------------------------------------------------------------------------
# stage implementations

def stage_synth(cfg: PipelineConfig, runner: StageRunner) -> None:
    out = runner.out_dir
    tx_name = "transactions.csv" if cfg.format == "csv" else "transactions.jsonl"
    outputs = [out / tx_name, out / "rates.csv", out / "truth.csv"]

    def fn():
        if cfg.archetypes:
            configs = []
            for spec in cfg.archetypes:
                spec = dict(spec)
                name = spec.pop("archetype", None)
                if name is None:
                    raise ValueError("archetype entry missing 'archetype' key")
                try:
                    archetype = Archetype(name)
                except ValueError:
                    raise ValueError(f"unknown archetype {name!r}") from None
                count = spec.pop("wallet_count", 0)
                base = default_config(archetype, count)
                for key, value in spec.items():
                    if not hasattr(base, key):
                        raise ValueError(f"unknown archetype parameter {key!r}")
                    setattr(base, key, value)
                configs.append(base)
        else:
            configs = keystone_configs()
        market = None
        if cfg.market:
            kwargs = dict(cfg.market)
            if isinstance(kwargs.get("base_date"), str):
                kwargs["base_date"] = date.fromisoformat(kwargs["base_date"])
            market = MarketParams(**kwargs)
        ledger = generate_market(configs, cfg.duration_days,
                                 stage_seed(cfg.seed, "synth"), market)
        out.mkdir(parents=True, exist_ok=True)
        write_ledger(ledger, out, fmt=cfg.format)
        log.info("synth: %d transactions, %d wallets",
                 len(ledger.transactions), len(ledger.truth))

    runner.run("synth", [], outputs,
               {"seed": cfg.seed, "duration": cfg.duration_days,
                "archetypes": cfg.archetypes, "market": cfg.market,
                "format": cfg.format}, fn)


def stage_ingest(cfg: PipelineConfig, runner: StageRunner) -> None:
    out = runner.out_dir
    if not cfg.transactions:
        raise StageError("ingest", "no transactions file configured")
    if not cfg.rates:
        raise StageError("ingest", "no rates file configured")
    tx_path, rates_path = Path(cfg.transactions), Path(cfg.rates)
    outputs = [out / "ledger.sqlite", out / "rejected_lines.csv", out / "ingest_summary.json"]

    def fn():
        report = parse_transactions(tx_path, workers=cfg.workers)
        rates = load_rate_table(rates_path)
        out.mkdir(parents=True, exist_ok=True)
        save_ledger(report.records, out / "ledger.sqlite")
        write_rejected_report(report.rejected, out / "rejected_lines.csv")
        sales = sum(1 for r in report.records if r.value_eth > 0)
        summary = {
            "accepted": len(report.records),
            "rejected": len(report.rejected),
            "sales": sales,
            "transfers": len(report.records) - sales,
            "rate_days": len(rates),
            "rate_rows_rejected": len(rates.rejected),
        }
        (out / "ingest_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        log.info("ingest: %d accepted, %d rejected", summary["accepted"], summary["rejected"])

    runner.run("ingest", [tx_path, rates_path], outputs, {}, fn)


def stage_eda(cfg: PipelineConfig, runner: StageRunner) -> None:
    out = runner.out_dir
    outputs = [out / "eda.json", out / "first_digit.csv"]

    def fn():
        records = load_ledger(out / "ledger.sqlite")
        prices = [r.value_eth for r in records if r.value_eth > 0]
        if not prices:
            raise ValueError("ledger has no positive-value sales to screen")
        dist = first_digit_distribution(prices)
        benford = benford_chi_squared(dist)
        hist = round_price_histogram(prices, cfg.max_price)
        try:
            alpha = tail_exponent(prices, cfg.tail_fraction)
            tail = {"alpha": alpha, "tail_fraction": cfg.tail_fraction}
        except ValueError as exc:
            tail = {"alpha": None, "tail_fraction": cfg.tail_fraction, "error": str(exc)}
        payload = {
            "benford": {
                "counts": {str(d): dist.counts[d - 1] for d in range(1, 10)},
                "proportions": {str(d): dist.proportions[d - 1] for d in range(1, 10)},
                "chi_squared": benford.chi_squared,
                "degrees_of_freedom": benford.degrees_of_freedom,
                "critical_value_5pct": benford.critical_value_5pct,
                "reject": benford.reject,
            },
            "round_hist": {
                "counts": {str(k): v for k, v in hist.counts.items()},
                "multiple_of_five_ratio": hist.multiple_of_five_ratio,
                "total_in_range": hist.total,
            },
            "tail": tail,
        }
        (out / "eda.json").write_text(json.dumps(payload, indent=2) + "\n")
        lines = ["digit,observed_count,observed_proportion,expected_proportion"]
        for d in range(1, 10):
            lines.append(f"{d},{dist.counts[d - 1]},{dist.proportions[d - 1]!r},"
                         f"{FIRST_DIGIT_EXPECTED[d - 1]!r}")
        (out / "first_digit.csv").write_text("\n".join(lines) + "\n")

    runner.run("eda", [out / "ledger.sqlite"], outputs,
               {"max_price": cfg.max_price, "tail_fraction": cfg.tail_fraction}, fn)


def stage_features(cfg: PipelineConfig, runner: StageRunner) -> None:
    out = runner.out_dir
    if not cfg.rates:
        raise StageError("features", "no rates file configured")
    rates_path = Path(cfg.rates)
    outputs = [out / "features.csv", out / "correlation.csv", out / "retained_features.json"]

    def fn():
        records = load_ledger(out / "ledger.sqlite")
        if not records:
            raise ValueError("ledger is empty")
        rates = load_rate_table(rates_path)
        feats = compute_wallet_features(records, rates, workers=cfg.workers)
        matrix = assemble_feature_matrix(feats)
        save_feature_matrix(matrix, out / "features.csv")
        std = standardize(matrix)
        pruned = prune_correlated(std, threshold=cfg.correlation_threshold)
        save_correlation_csv(pruned.correlation, std.feature_names, out / "correlation.csv")
        (out / "retained_features.json").write_text(json.dumps({
            "retained": pruned.retained,
            "dropped": pruned.dropped,
            "threshold": cfg.correlation_threshold,
        }, indent=2) + "\n")
        log.info("features: %d wallets, %d features retained of %d",
                 len(matrix.wallets), len(pruned.retained), len(matrix.feature_names))

    runner.run("features", [out / "ledger.sqlite", rates_path], outputs,
               {"threshold": cfg.correlation_threshold}, fn)


def stage_cluster(cfg: PipelineConfig, runner: StageRunner) -> None:
    out = runner.out_dir
    outputs = [out / "kselection.csv", out / "model.json", out / "assignments.csv",
               out / "cv.csv", out / "kselection.json"]

    def fn():
        raw = load_feature_matrix(out / "features.csv")
        retained = json.loads((out / "retained_features.json").read_text())["retained"]
        std = select_features(standardize(raw), retained)
        seed = stage_seed(cfg.seed, "cluster")
        ks = cfg.ks()
        m = std.values.shape[0]
        ks = [k for k in ks if k <= m]
        if len(ks) < 1:
            raise ValueError("k_range has no feasible k for this dataset")
        report = select_k(std, ks, seed=seed, subsample_size=cfg.silhouette_subsample,
                          max_iter=cfg.max_iter, restarts=cfg.restarts)
        report.to_csv(out / "kselection.csv")
        chosen = cfg.k if cfg.k is not None else report.chosen_k
        (out / "kselection.json").write_text(json.dumps({
            "knee_k": report.knee_k,
            "chosen_k": report.chosen_k,
            "override_k": cfg.k,
            "k_used": chosen,
        }, indent=2) + "\n")
        model = report.model_for(chosen)
        if model is None:
            model = kmeans_fit(std, chosen, seed=seed, max_iter=cfg.max_iter,
                               restarts=cfg.restarts)
        save_model(model, std, out / "model.json")
        cv = cross_validate(std, chosen, n_splits=cfg.cv_splits,
                            seed=stage_seed(cfg.seed, "cv"), max_iter=cfg.max_iter,
                            restarts=cfg.restarts)
        cv.to_csv(out / "cv.csv")
        log.info("cluster: knee=%s chosen=%s used=%s", report.knee_k, report.chosen_k, chosen)

    runner.run("cluster", [out / "features.csv", out / "retained_features.json"], outputs,
               {"seed": cfg.seed, "k_range": cfg.k_range, "k": cfg.k,
                "subsample": cfg.silhouette_subsample, "cv_splits": cfg.cv_splits,
                "max_iter": cfg.max_iter, "restarts": cfg.restarts}, fn)


def stage_analyze(cfg: PipelineConfig, runner: StageRunner) -> None:
    out = runner.out_dir
    outputs = [out / "report.json", out / "pca_scores.csv", out / "radar.csv",
               out / "boxplot.csv", out / "wash_candidates.csv"]
    rules_input = [Path(cfg.rules)] if cfg.rules else []

    def fn():
        raw = load_feature_matrix(out / "features.csv")
        retained = json.loads((out / "retained_features.json").read_text())["retained"]
        model_payload = json.loads((out / "model.json").read_text())
        assignments = _load_assignments(out / "assignments.csv", raw.wallets)
        std = select_features(standardize(raw), retained)
        centroids = np.array(model_payload["centroids_standardized"], dtype=float)
        model = KMeansModel(
            k=model_payload["k"],
            centroids=centroids,
            assignments=assignments,
            wcss=wcss(std.values, centroids, assignments),
            iterations=model_payload.get("iterations", 0),
            seed=model_payload.get("seed", 0),
            converged=model_payload.get("converged", True),
        )
        projection = pca_fit(std, n_components=min(2, std.values.shape[1]))
        profiles = cluster_profiles(raw, model)
        if cfg.rules:
            rules = parse_rules(Path(cfg.rules).read_text(encoding="utf-8"), raw.feature_names)
        else:
            rules = default_rules(raw.feature_names)
        label_clusters(profiles, raw, rules)
        eda_payload = None
        if (out / "eda.json").exists():
            eda_payload = json.loads((out / "eda.json").read_text())
        k_selection = _load_kselection(out)
        cv = _load_cv(out)
        bundle = build_report(raw, model, profiles, projection,
                              eda=eda_payload, k_selection=k_selection,
                              cross_validation=cv)
        write_report(bundle, out)
        wash = bundle.master["wash"]
        log.info("analyze: %d clusters, wash candidates %.2f%%",
                 model.k, wash["percentage"])

    runner.run("analyze",
               [out / "features.csv", out / "model.json", out / "assignments.csv"] + rules_input,
               outputs, {"rules": cfg.rules}, fn)


def _load_assignments(path: Path, wallets: list[str]):
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "wallet,cluster":
        raise ValueError("assignments.csv must have wallet,cluster header")
    mapping = {}
    for line in lines[1:]:
        if not line:
            continue
        wallet, cluster = line.rsplit(",", 1)
        mapping[wallet] = int(cluster)
    try:
        return np.array([mapping[w] for w in wallets], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"assignments.csv missing wallet {exc.args[0]!r}") from None


def _load_kselection(out: Path) -> KSelectionReport | None:
    path = out / "kselection.csv"
    meta_path = out / "kselection.json"
    if not path.exists():
        return None
    ks, wcss_values, dbi, sil = [], [], [], []
    lines = path.read_text().splitlines()
    for line in lines[1:]:
        if not line:
            continue
        k, w, d, s = line.split(",")
        ks.append(int(k))
        wcss_values.append(float(w))
        dbi.append(float(d))
        sil.append(float(s))
    knee_k = chosen_k = None
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        knee_k = meta.get("knee_k")
        chosen_k = meta.get("k_used")
    return KSelectionReport(ks=ks, wcss=wcss_values, dbi=dbi, silhouette=sil,
                            knee_k=knee_k, chosen_k=chosen_k if chosen_k else (ks[0] if ks else 0))


def _load_cv(out: Path) -> CrossValidationReport | None:
    path = out / "cv.csv"
    if not path.exists():
        return None
    rows = []
    for line in path.read_text().splitlines()[1:]:
        if not line:
            continue
        split, train_sse, test_sse, train_dbi, test_dbi = line.split(",")
        rows.append(CrossValidationRow(int(split), float(train_sse), float(test_sse),
                                       float(train_dbi), float(test_dbi)))
    summary: dict[str, float] = {}
    if rows:
        for name in ("train_sse", "test_sse", "train_dbi", "test_dbi"):
            values = np.array([getattr(r, name) for r in rows])
            summary[f"{name}_mean"] = float(values.mean())
            summary[f"{name}_sd"] = float(values.std())
    return CrossValidationReport(rows=rows, summary=summary)


# ---------------------------------------------------------------------------
# argument handling

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="walletsift",
        description="Behavioral clustering and wash-trade screening for NFT ledgers.")
    parser.add_argument("--version", action="version", version=f"walletsift {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed (required, no default)")
        p.add_argument("--workers", type=int, help="parallel workers within a stage")
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("-q", "--quiet", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic labeled market")
    add_common(p)
    p.add_argument("--duration", type=int, dest="duration_days")
    p.add_argument("--format", choices=["csv", "jsonl"])

    p = sub.add_parser("ingest", help="parse and persist a transaction ledger")
    add_common(p)
    p.add_argument("--transactions")
    p.add_argument("--rates")

    p = sub.add_parser("eda", help="anomaly screens over the ingested ledger")
    add_common(p)
    p.add_argument("--max-price", type=int, dest="max_price")
    p.add_argument("--tail-fraction", type=float, dest="tail_fraction")

    p = sub.add_parser("features", help="compute the 26-feature wallet matrix")
    add_common(p)
    p.add_argument("--rates")
    p.add_argument("--correlation-threshold", type=float, dest="correlation_threshold")

    p = sub.add_parser("cluster", help="k selection, k-means fit, cross-validation")
    add_common(p)
    p.add_argument("--k-range", dest="k_range", help="inclusive lo:hi, e.g. 2:10")
    p.add_argument("--k", type=int, help="override the automatic k choice")
    p.add_argument("--cv-splits", type=int, dest="cv_splits")
    p.add_argument("--subsample", type=int, dest="silhouette_subsample")
    p.add_argument("--max-iter", type=int, dest="max_iter")

    p = sub.add_parser("analyze", help="PCA, cluster profiles, labels, report")
    add_common(p)
    p.add_argument("--rules", help="labeling rules file")

    p = sub.add_parser("pipeline", help="run ingest through analyze")
    add_common(p)
    p.add_argument("--transactions")
    p.add_argument("--rates")
    p.add_argument("--max-price", type=int, dest="max_price")
    p.add_argument("--tail-fraction", type=float, dest="tail_fraction")
    p.add_argument("--correlation-threshold", type=float, dest="correlation_threshold")
    p.add_argument("--k-range", dest="k_range", help="inclusive lo:hi, e.g. 2:10")
    p.add_argument("--k", type=int)
    p.add_argument("--cv-splits", type=int, dest="cv_splits")
    p.add_argument("--subsample", type=int, dest="silhouette_subsample")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--rules")
    return parser


def _parse_k_range(text: str) -> list[int]:
    try:
        lo, hi = text.split(":")
        return [int(lo), int(hi)]
    except ValueError:
        raise ValueError(f"--k-range must be lo:hi, got {text!r}") from None


def make_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        payload = load_config(args.config)
        for key, value in payload.items():
            if not hasattr(cfg, key):
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    for key in ("transactions", "rates", "out", "seed", "workers", "max_price",
                "tail_fraction", "correlation_threshold", "k", "cv_splits",
                "silhouette_subsample", "max_iter", "rules", "duration_days", "format"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    k_range = getattr(args, "k_range", None)
    if k_range is not None:
        cfg.k_range = _parse_k_range(k_range) if isinstance(k_range, str) else list(k_range)
    return cfg


STAGE_SEQUENCE = {
    "synth": [stage_synth],
    "ingest": [stage_ingest],
    "eda": [stage_eda],
    "features": [stage_features],
    "cluster": [stage_cluster],
    "analyze": [stage_analyze],
    "pipeline": [stage_ingest, stage_eda, stage_features, stage_cluster, stage_analyze],
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        cfg.validate()
        runner = StageRunner(Path(cfg.out))
        for stage_fn in STAGE_SEQUENCE[args.command]:
            stage_fn(cfg, runner)
    except StageError as exc:
        print(f'ERROR stage={exc.stage} message="{exc}"', file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f'ERROR stage=config message="{exc}"', file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
