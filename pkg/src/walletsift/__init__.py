"""walletsift: behavioral clustering and wash-trade screening for NFT
transaction ledgers."""

__version__ = "0.1.0"

from .ledger import (
    TransactionKind,
    TransactionRecord,
    RateTable,
    classify_transaction,
    parse_transactions,
    load_rate_table,
    to_usd,
)
from .screening import (
    first_digit_distribution,
    benford_chi_squared,
    round_price_histogram,
    tail_exponent,
)
from .series import CollectionDailySeries, collection_daily_series, build_daily_series
from .features import (
    FEATURE_NAMES,
    WalletFeatures,
    FeatureMatrix,
    compute_wallet_features,
    assemble_feature_matrix,
    standardize,
    prune_correlated,
)
from .clustering import (
    KMeansModel,
    kmeans_fit,
    wcss,
    davies_bouldin,
    silhouette,
    elbow_knee,
    select_k,
    cross_validate,
    adjusted_rand_index,
)
from .analysis import (
    pca_fit,
    cluster_profiles,
    label_clusters,
    build_report,
)
from .synth import (
    Archetype,
    ArchetypeConfig,
    generate_market,
    generate_keystone_market,
)
