"""Shared fixtures: small synthetic shapes and their graph stacks."""

import numpy as np
import pytest

from gcskel.graphs import build_connectivity, build_mst, compute_thresholds
from gcskel.synth import straight_tube


def graph_stack(cloud, knn=100):
    """MST, adaptive thresholds and connectivity graph for a cloud."""
    mst = build_mst(cloud, knn=min(knn, len(cloud) - 1))
    thr = compute_thresholds(mst, len(cloud))
    cnct = build_connectivity(cloud, thr)
    return mst, thr, cnct


def fibonacci_sphere(n):
    """Near-uniform unit-sphere samples (golden-angle spiral)."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(1.0 - z * z)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    theta = golden * i
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])


@pytest.fixture(scope="session")
def small_tube():
    """Radius-1 cylinder along +z, 20 rings of 24, exact radial normals."""
    return straight_tube(1.0, 6.0, 20, 24)


@pytest.fixture(scope="session")
def small_tube_graphs(small_tube):
    cloud, _ = small_tube
    return graph_stack(cloud)
