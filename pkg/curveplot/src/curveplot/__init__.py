"""Read-only figure rendering for experiment results and embedding dumps."""

from .plots import (load_embedding_dump, load_ledger, load_results, mean_std,
                    pca_2d, plot_embeddings, plot_ratio, plot_tradeoff,
                    ratio_series, tradeoff_series)

__all__ = [
    "load_embedding_dump", "load_ledger", "load_results", "mean_std",
    "pca_2d", "plot_embeddings", "plot_ratio", "plot_tradeoff",
    "ratio_series", "tradeoff_series",
]

__version__ = "0.1.0"
