"""Uniform batch interface over every ranking method.

One bandwidth table is computed per batch and shared across probes, so
the quadratic work stays offline and each probe only pays the
linearithmic online cost.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor

from .core import DistanceMetric, FeatureSet, RankedList
from .errors import InvalidParams
from .kernels import (
    SigmaTable,
    bi_dakr_rank,
    compute_sigma_table,
    default_k_sigma,
    inv_dakr_rank,
)
from .neighbors import (
    GALLERY_ONLY,
    WITH_PROBES,
    AugmentationPolicy,
    rank_by_distance,
    rank_by_inn,
    rank_by_rnn,
)

METHODS = ("knn", "inn", "rnn", "inv_dakr", "bi_dakr")
DAKR_METHODS = ("inv_dakr", "bi_dakr")


def parse_method_token(token: str) -> tuple[str, str]:
    """Split a method token like ``bi_dakr+`` into (method, policy mode);
    the trailing ``+`` selects probe augmentation."""
    token = token.strip()
    mode = GALLERY_ONLY
    if token.endswith("+"):
        token = token[:-1]
        mode = WITH_PROBES
    if token not in METHODS:
        raise InvalidParams(f"unknown method {token!r}; expected one of {METHODS}")
    return token, mode


def resolve_policy(mode: str, probes: FeatureSet) -> AugmentationPolicy:
    """Build the augmentation policy for a batch, degrading to gallery-only
    (with a warning) when there are no extra probes to augment with."""
    if mode == GALLERY_ONLY:
        return AugmentationPolicy.gallery_only()
    if len(probes) < 2:
        warnings.warn(
            "with_probes requested but the probe set has no extra samples; "
            "falling back to gallery_only",
            RuntimeWarning,
            stacklevel=2,
        )
        return AugmentationPolicy.gallery_only()
    return AugmentationPolicy.with_probes(probes)


def rerank(
    method: str,
    probes: FeatureSet,
    gallery: FeatureSet,
    metric: DistanceMetric,
    k: int | None = None,
    k_sigma: int | None = None,
    policy: AugmentationPolicy | str = GALLERY_ONLY,
    table: SigmaTable | None = None,
    n_threads: int | None = None,
) -> list[RankedList]:
    """Rank the gallery for every probe with the chosen method.

    ``policy`` may be an :class:`AugmentationPolicy` or one of the mode
    strings; the string form augments with the batch's own probe set,
    where each probe's pool contains the others but never itself.  ``k``
    drives the neighbor methods, ``k_sigma`` the kernel methods (defaulting
    to 5% of the gallery); a prebuilt ``table`` is verified and reused.
    """
    if method not in METHODS:
        raise InvalidParams(f"unknown method {method!r}; expected one of {METHODS}")
    if isinstance(policy, str):
        policy = resolve_policy(policy, probes)

    if method in ("inn", "rnn"):
        if k is None or k < 1:
            raise InvalidParams(f"method {method} requires k >= 1")
    if method in DAKR_METHODS:
        if k_sigma is None:
            k_sigma = default_k_sigma(len(gallery))
        if table is None:
            table = compute_sigma_table(gallery, metric, k_sigma, policy)
        elif table.k_sigma != k_sigma:
            raise InvalidParams(
                f"table was built with k_sigma={table.k_sigma}, requested {k_sigma}"
            )

    def rank_one(row: int) -> RankedList:
        pid = int(probes.ids[row])
        vec = probes.vectors[row]
        if method == "knn":
            return rank_by_distance(pid, vec, gallery, metric)
        if method == "inn":
            return rank_by_inn(pid, vec, gallery, metric, k, policy)
        if method == "rnn":
            return rank_by_rnn(pid, vec, gallery, metric, k, policy)
        if method == "inv_dakr":
            return inv_dakr_rank(pid, vec, gallery, metric, table)
        return bi_dakr_rank(pid, vec, gallery, metric, table, policy)

    rows = range(len(probes))
    if n_threads is not None and n_threads > 1 and len(probes) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            return list(pool.map(rank_one, rows))
    return [rank_one(row) for row in rows]
