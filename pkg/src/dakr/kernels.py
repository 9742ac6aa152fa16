"""Density-adaptive kernel scoring: bandwidth tables and the inverse and
bidirectional re-ranking rules.

A bandwidth sigma_j is the distance from sample j to its k-th nearest
neighbor inside the reference set (gallery only, or gallery plus probes),
so it encodes local density: small in crowded regions, large in sparse
ones.  Bandwidths are the offline phase; a probe is then ranked online by
sorting kernel responses:

* inverse rule:        phi(d(x, y_j) / sigma_j), a smoothed inverse-NN;
* bidirectional rule:  phi(d(x, y_j)^2 / (sigma_i * sigma_j)), a smoothed
  reciprocal-NN, where sigma_i is the probe's own bandwidth.

Both rules sort on the kernel argument rather than on phi itself, which
gives the identical order for any strictly decreasing basis while being
immune to floating-point underflow at large arguments; reported scores
still apply phi.
"""

from __future__ import annotations

import hashlib
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    DESCENDING_SCORE,
    PRECOMPUTED,
    DistanceMetric,
    FeatureSet,
    RankedList,
    distance_matrix,
    pairwise,
)
from .errors import (
    EmptyGallery,
    InvalidMetric,
    InvalidParams,
    NonPositiveSigma,
    StaleSigmaTable,
)
from .neighbors import GALLERY_ONLY, WITH_PROBES, AugmentationPolicy

_BLOCK_ELEMENTS = 4_000_000

# Relative floor for degenerate (duplicate-point) bandwidths.
_SIGMA_FLOOR_SCALE = 1e-12

_BASES = {"exp_neg": lambda t: np.exp(-t)}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel basis plus the k used for bandwidths.

    Only the exponential basis ships; the slot exists so heavier-tailed
    bases can be registered later without changing call sites.
    """

    basis: str = "exp_neg"
    k_sigma: int = 1

    def __post_init__(self):
        if self.basis not in _BASES:
            raise InvalidParams(f"unknown kernel basis {self.basis!r}")
        if self.k_sigma < 1:
            raise InvalidParams("k_sigma must be >= 1")

    def phi(self, t) -> np.ndarray:
        return _BASES[self.basis](np.asarray(t, dtype=np.float64))


def _phi(t) -> np.ndarray:
    return _BASES["exp_neg"](np.asarray(t, dtype=np.float64))


def reference_digest(
    gallery: FeatureSet,
    metric: DistanceMetric,
    k_sigma: int,
    policy_mode: str,
    probes_digest: bytes = b"",
) -> bytes:
    """Content digest binding a bandwidth table to the data that built it."""
    h = hashlib.sha256()
    h.update(gallery.content_digest())
    h.update(metric.content_digest())
    h.update(struct.pack("<I", k_sigma))
    h.update(b"\x01" if policy_mode == WITH_PROBES else b"\x00")
    h.update(probes_digest)
    return h.digest()


@dataclass(frozen=True)
class SigmaTable:
    """Per-sample bandwidths, guarded by a content digest.

    Correctness silently breaks if bandwidths and data drift apart, so
    every scoring call re-derives the digest and fails loudly on mismatch.
    Under with_probes the probes' own bandwidths are cached too, keeping
    the online phase free of quadratic work.
    """

    k_sigma: int
    policy_mode: str
    reference_digest: bytes
    gallery_ids: np.ndarray
    gallery_sigmas: np.ndarray
    probes_digest: bytes = b""
    probe_ids: np.ndarray | None = None
    probe_sigmas: np.ndarray | None = None

    def __post_init__(self):
        if self.k_sigma < 1:
            raise InvalidParams("k_sigma must be >= 1")
        if self.policy_mode not in (GALLERY_ONLY, WITH_PROBES):
            raise InvalidParams(f"unknown policy mode {self.policy_mode!r}")
        gallery_ids = np.asarray(self.gallery_ids, dtype=np.int64)
        sigmas = np.asarray(self.gallery_sigmas, dtype=np.float64)
        if gallery_ids.shape != sigmas.shape:
            raise InvalidParams("one sigma per gallery sample required")
        if np.any(sigmas <= 0) or not np.all(np.isfinite(sigmas)):
            raise NonPositiveSigma("bandwidths must be positive and finite")
        object.__setattr__(self, "gallery_ids", gallery_ids)
        object.__setattr__(self, "gallery_sigmas", sigmas)
        if self.probe_sigmas is not None:
            probe_ids = np.asarray(self.probe_ids, dtype=np.int64)
            probe_sigmas = np.asarray(self.probe_sigmas, dtype=np.float64)
            if probe_ids.shape != probe_sigmas.shape:
                raise InvalidParams("one sigma per probe required")
            if np.any(probe_sigmas <= 0) or not np.all(np.isfinite(probe_sigmas)):
                raise NonPositiveSigma("bandwidths must be positive and finite")
            object.__setattr__(self, "probe_ids", probe_ids)
            object.__setattr__(self, "probe_sigmas", probe_sigmas)

    def sigma_of(self, gallery_id: int) -> float:
        rows = np.nonzero(self.gallery_ids == int(gallery_id))[0]
        if len(rows) == 0:
            raise KeyError(gallery_id)
        return float(self.gallery_sigmas[rows[0]])

    def cached_probe_sigma(self, probe_id: int) -> float | None:
        if self.probe_sigmas is None:
            return None
        rows = np.nonzero(self.probe_ids == int(probe_id))[0]
        if len(rows) == 0:
            return None
        return float(self.probe_sigmas[rows[0]])


def _kth_smallest_rows(rows: np.ndarray, k: int) -> np.ndarray:
    return np.partition(rows, k - 1, axis=1)[:, k - 1]


def compute_sigma_table(
    gallery: FeatureSet,
    metric: DistanceMetric,
    k_sigma: int,
    policy: AugmentationPolicy = AugmentationPolicy(),
    n_threads: int | None = None,
) -> SigmaTable:
    """Offline bandwidth computation for every reference sample.

    sigma_j is the k_sigma-th nearest-neighbor distance of sample j inside
    the reference set (self excluded); with_probes augments the reference
    set with the probe collection.  k_sigma larger than the pool clamps to
    the pool size with a warning.  Duplicate points would give sigma = 0,
    which is floored at a tiny fraction of the largest pairwise distance
    so kernels stay finite and coincident samples still win.
    """
    if k_sigma < 1:
        raise InvalidParams("k_sigma must be >= 1")

    probes_digest = b""
    if policy.mode == WITH_PROBES:
        if metric.kind == PRECOMPUTED:
            raise InvalidMetric(
                "precomputed distances cannot cover probe-augmented references"
            )
        probes = policy.probes
        if probes.dim != gallery.dim:
            raise InvalidParams(
                f"probe dim {probes.dim} != gallery dim {gallery.dim}"
            )
        probes_digest = probes.content_digest()
        fresh = ~np.isin(probes.ids, gallery.ids)
        ref_vectors = np.vstack([gallery.vectors, probes.vectors[fresh]])
        extra_probe_ids = probes.ids[fresh]
    else:
        ref_vectors = gallery.vectors
        extra_probe_ids = None

    n_ref = len(ref_vectors)
    pool = n_ref - 1
    if pool < 1:
        raise EmptyGallery("need at least two reference samples for bandwidths")
    k_eff = k_sigma
    if k_eff > pool:
        warnings.warn(
            f"k_sigma={k_sigma} exceeds pool size {pool}; clamping",
            RuntimeWarning,
            stacklevel=2,
        )
        k_eff = pool

    if metric.kind == PRECOMPUTED:
        full = distance_matrix(metric, gallery, gallery)

    sigmas = np.empty(n_ref, dtype=np.float64)
    max_dist = np.zeros(1, dtype=np.float64)
    block = max(1, min(n_ref, _BLOCK_ELEMENTS // n_ref))

    def fill(start: int) -> None:
        stop = min(start + block, n_ref)
        if metric.kind == PRECOMPUTED:
            rows = full[start:stop].copy()
        else:
            rows = pairwise(metric, ref_vectors[start:stop], ref_vectors)
        max_dist[0] = max(max_dist[0], float(rows.max()))
        rows[np.arange(stop - start), np.arange(start, stop)] = np.inf
        sigmas[start:stop] = _kth_smallest_rows(rows, k_eff)

    starts = list(range(0, n_ref, block))
    if n_threads is not None and n_threads > 1 and len(starts) > 1:
        # max_dist updates race benignly only if serialized; compute maxima
        # per block instead and reduce after the pool finishes.
        maxima = np.zeros(len(starts), dtype=np.float64)

        def fill_tracked(idx_start):
            idx, start = idx_start
            stop = min(start + block, n_ref)
            if metric.kind == PRECOMPUTED:
                rows = full[start:stop].copy()
            else:
                rows = pairwise(metric, ref_vectors[start:stop], ref_vectors)
            maxima[idx] = float(rows.max())
            rows[np.arange(stop - start), np.arange(start, stop)] = np.inf
            sigmas[start:stop] = _kth_smallest_rows(rows, k_eff)

        with ThreadPoolExecutor(max_workers=n_threads) as pool_exec:
            list(pool_exec.map(fill_tracked, enumerate(starts)))
        max_dist[0] = float(maxima.max())
    else:
        for start in starts:
            fill(start)

    floor = _SIGMA_FLOOR_SCALE * (max_dist[0] if max_dist[0] > 0 else 1.0)
    sigmas = np.maximum(sigmas, floor)

    n_gallery = len(gallery)
    gallery_sigmas = sigmas[:n_gallery]
    probe_ids = None
    probe_sigmas = None
    if policy.mode == WITH_PROBES:
        probes = policy.probes
        probe_sigmas = np.empty(len(probes), dtype=np.float64)
        fresh_sigma = {int(i): float(s) for i, s in zip(extra_probe_ids, sigmas[n_gallery:])}
        gallery_sigma = {int(i): float(s) for i, s in zip(gallery.ids, gallery_sigmas)}
        for row, pid in enumerate(probes.ids):
            pid = int(pid)
            # A probe that duplicates a gallery sample shares its bandwidth.
            probe_sigmas[row] = fresh_sigma.get(pid, gallery_sigma.get(pid, np.nan))
        probe_ids = probes.ids.copy()

    return SigmaTable(
        k_sigma=k_sigma,
        policy_mode=policy.mode,
        reference_digest=reference_digest(
            gallery, metric, k_sigma, policy.mode, probes_digest
        ),
        gallery_ids=gallery.ids.copy(),
        gallery_sigmas=gallery_sigmas,
        probes_digest=probes_digest,
        probe_ids=probe_ids,
        probe_sigmas=probe_sigmas,
    )


def _check_table(table: SigmaTable, gallery: FeatureSet, metric: DistanceMetric) -> None:
    expected = reference_digest(
        gallery, metric, table.k_sigma, table.policy_mode, table.probes_digest
    )
    if expected != table.reference_digest:
        raise StaleSigmaTable(
            "bandwidth table does not match this gallery/metric; recompute it"
        )


def inv_dakr_score(
    probe_vector,
    gallery: FeatureSet,
    metric: DistanceMetric,
    table: SigmaTable,
    kernel: KernelSpec | None = None,
) -> np.ndarray:
    """Kernel response of every gallery sample evaluated inversely at the
    probe: phi(d(x, y_j) / sigma_j), length |gallery|."""
    _check_table(table, gallery, metric)
    probe_vector = np.asarray(probe_vector, dtype=np.float64)
    d = pairwise(metric, probe_vector[None, :], gallery.vectors)[0]
    phi = kernel.phi if kernel is not None else _phi
    return phi(d / table.gallery_sigmas)


def inv_dakr_rank(
    probe_id: int,
    probe_vector,
    gallery: FeatureSet,
    metric: DistanceMetric,
    table: SigmaTable,
    kernel: KernelSpec | None = None,
) -> RankedList:
    """Descending-score ranking under the inverse rule.

    Sorting happens on the kernel argument d/sigma (ascending), ties by
    ascending gallery id; the probe's own gallery copy, if any, is
    excluded from the candidates.
    """
    _check_table(table, gallery, metric)
    probe_vector = np.asarray(probe_vector, dtype=np.float64)
    d = pairwise(metric, probe_vector[None, :], gallery.vectors)[0]
    t = d / table.gallery_sigmas
    keep = gallery.ids != int(probe_id)
    ids = gallery.ids[keep]
    if len(ids) == 0:
        raise EmptyGallery("no gallery candidates for this probe")
    t = t[keep]
    order = np.lexsort((ids, t))
    phi = kernel.phi if kernel is not None else _phi
    return RankedList(
        probe_id=int(probe_id),
        gallery_ids=ids[order],
        values=phi(t[order]),
        order=DESCENDING_SCORE,
    )


def probe_sigma(
    probe_id: int,
    probe_vector,
    gallery: FeatureSet,
    metric: DistanceMetric,
    table: SigmaTable,
    policy: AugmentationPolicy = AugmentationPolicy(),
) -> float:
    """The probe's own bandwidth.

    Gallery-only: its k_sigma-th nearest-neighbor distance within the
    gallery (own copy excluded).  With probes: served from the table's
    cache when possible, otherwise computed over gallery plus probes minus
    the probe itself.
    """
    if policy.mode == WITH_PROBES or table.policy_mode == WITH_PROBES:
        cached = table.cached_probe_sigma(probe_id)
        if cached is not None:
            return cached
        if policy.mode != WITH_PROBES:
            raise InvalidParams(
                "probe sigma not cached; pass the with_probes policy to compute it"
            )
    probe_vector = np.asarray(probe_vector, dtype=np.float64)
    keep = gallery.ids != int(probe_id)
    cand_vectors = [gallery.vectors[keep]]
    if policy.mode == WITH_PROBES:
        probes = policy.probes
        fresh = (probes.ids != int(probe_id)) & ~np.isin(probes.ids, gallery.ids)
        if np.any(fresh):
            cand_vectors.append(probes.vectors[fresh])
    cands = np.vstack(cand_vectors) if len(cand_vectors) > 1 else cand_vectors[0]
    if len(cands) == 0:
        raise EmptyGallery("no reference samples to derive the probe bandwidth")
    d = pairwise(metric, probe_vector[None, :], cands)[0]
    k_eff = min(table.k_sigma, len(d))
    sigma = float(np.partition(d, k_eff - 1)[k_eff - 1])
    top = float(d.max())
    floor = _SIGMA_FLOOR_SCALE * (top if top > 0 else 1.0)
    return max(sigma, floor)


def bi_dakr_score(
    probe_vector,
    sigma_i: float,
    gallery: FeatureSet,
    metric: DistanceMetric,
    table: SigmaTable,
    kernel: KernelSpec | None = None,
) -> np.ndarray:
    """Bidirectional belief for every gallery sample:
    phi(d(x, y_j)^2 / (sigma_i * sigma_j)), length |gallery|.

    The squared distance merges the probe-to-gallery and gallery-to-probe
    beliefs in one symmetric form.
    """
    if not np.isfinite(sigma_i) or sigma_i <= 0:
        raise NonPositiveSigma(f"sigma_i must be positive, got {sigma_i!r}")
    _check_table(table, gallery, metric)
    probe_vector = np.asarray(probe_vector, dtype=np.float64)
    d = pairwise(metric, probe_vector[None, :], gallery.vectors)[0]
    phi = kernel.phi if kernel is not None else _phi
    return phi(d * d / (sigma_i * table.gallery_sigmas))


def bi_dakr_rank(
    probe_id: int,
    probe_vector,
    gallery: FeatureSet,
    metric: DistanceMetric,
    table: SigmaTable,
    policy: AugmentationPolicy = AugmentationPolicy(),
    kernel: KernelSpec | None = None,
) -> RankedList:
    """Descending-score ranking under the bidirectional rule.

    The probe bandwidth comes from :func:`probe_sigma` under the same
    policy the table was built with; the table's gallery bandwidths are
    reused untouched (the offline/online split).
    """
    _check_table(table, gallery, metric)
    if policy.mode != table.policy_mode:
        raise StaleSigmaTable(
            f"table was built {table.policy_mode}, ranking requested {policy.mode}"
        )
    sigma_i = probe_sigma(probe_id, probe_vector, gallery, metric, table, policy)
    probe_vector = np.asarray(probe_vector, dtype=np.float64)
    d = pairwise(metric, probe_vector[None, :], gallery.vectors)[0]
    t = d * d / (sigma_i * table.gallery_sigmas)
    keep = gallery.ids != int(probe_id)
    ids = gallery.ids[keep]
    if len(ids) == 0:
        raise EmptyGallery("no gallery candidates for this probe")
    t = t[keep]
    order = np.lexsort((ids, t))
    phi = kernel.phi if kernel is not None else _phi
    return RankedList(
        probe_id=int(probe_id),
        gallery_ids=ids[order],
        values=phi(t[order]),
        order=DESCENDING_SCORE,
    )


def default_k_sigma(n_gallery: int, avg_true_matches: float | None = None) -> int:
    """Rule of thumb for k_sigma: 5% of the gallery for single-shot data,
    the average ground-truth multiplicity for multiple-shot data."""
    if avg_true_matches is not None and avg_true_matches > 1:
        return max(1, round(avg_true_matches))
    return max(1, round(0.05 * n_gallery))
