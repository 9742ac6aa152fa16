import numpy as np
import pytest

from dakr import DistanceMetric, FeatureSet

# 2-D instance realizing the textbook reciprocal-neighbor picture at k=3:
# the probe's three nearest gallery samples are ids 1-3, but only 2 and 3
# search back (1 sits in its own dense cluster, ids 4-6); ids 7-8 crowd
# around 3 so one extra probe can push the probe out of 3's neighborhood.
RECIPROCAL_GALLERY = {
    1: (1.0, 0.0),
    2: (0.0, 1.15),
    3: (0.0, -1.25),
    4: (1.5, 0.3),
    5: (1.5, -0.3),
    6: (1.6, 0.0),
    7: (0.6, -1.9),
    8: (0.9, -1.7),
}
RECIPROCAL_PROBE_ID = 0
RECIPROCAL_PROBE = (0.0, 0.0)
EXTRA_PROBE_ID = 9
EXTRA_PROBE = (0.35, -1.75)


def reciprocal_feature_set() -> FeatureSet:
    ids = sorted(RECIPROCAL_GALLERY)
    return FeatureSet(ids, [RECIPROCAL_GALLERY[i] for i in ids])


def two_probe_set() -> FeatureSet:
    return FeatureSet(
        [RECIPROCAL_PROBE_ID, EXTRA_PROBE_ID], [RECIPROCAL_PROBE, EXTRA_PROBE]
    )


@pytest.fixture
def euclidean() -> DistanceMetric:
    return DistanceMetric.euclidean()


@pytest.fixture
def reciprocal_gallery() -> FeatureSet:
    return reciprocal_feature_set()


def random_instance(rng: np.random.Generator, max_n=12, max_d=4, min_n=3):
    """Small random gallery/probe pair as plain dicts for the oracles and
    as FeatureSets for the library."""
    n = int(rng.integers(min_n, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    n_probes = int(rng.integers(1, 4))
    gallery_vecs = rng.normal(0.0, 1.0, size=(n, d))
    probe_vecs = rng.normal(0.0, 1.0, size=(n_probes, d))
    gallery = FeatureSet(np.arange(n), gallery_vecs)
    probes = FeatureSet(np.arange(100, 100 + n_probes), probe_vecs)
    gallery_dict = {int(i): [float(v) for v in row] for i, row in zip(gallery.ids, gallery_vecs)}
    probes_dict = {int(i): [float(v) for v in row] for i, row in zip(probes.ids, probe_vecs)}
    return gallery, probes, gallery_dict, probes_dict
