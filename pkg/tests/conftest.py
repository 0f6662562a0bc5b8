import numpy as np
import pytest

from mamforge.descriptors import AcsfParams
from mamforge.potential import PotentialModel
from mamforge.structure import Structure

TEST_ACSF = AcsfParams(
    cutoff=4.0,
    radial=((0.3, 0.0), (0.9, 1.6), (1.8, 2.6)),
    angular=((0.02, 1.0, 1.0), (0.03, 2.0, -1.0), (0.08, 4.0, 1.0)),
)


def make_cluster(rng, n=8, spread=3.0, min_dist=1.4, species=None):
    """Random non-periodic cluster with a minimum pair separation."""
    pos = [rng.uniform(-spread, spread, 3)]
    while len(pos) < n:
        trial = rng.uniform(-spread, spread, 3)
        if min(np.linalg.norm(trial - q) for q in pos) > min_dist:
            pos.append(trial)
    if species is None:
        species = rng.choice([1, 3, 6, 8, 14], size=n)
    return Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                     positions=np.array(pos), species=species)


def make_periodic(rng, n=8, a=9.0, min_dist=1.4, species=None):
    """Random fully periodic cell with a minimum (minimum-image) separation."""
    cell = a * np.eye(3)
    pos = [rng.uniform(0, a, 3)]
    s_probe = None
    while len(pos) < n:
        trial = rng.uniform(0, a, 3)
        ok = True
        for q in pos:
            d = trial - q
            d -= a * np.round(d / a)
            if np.linalg.norm(d) <= min_dist:
                ok = False
                break
        if ok:
            pos.append(trial)
    if species is None:
        species = rng.choice([3, 6, 14], size=n)
    return Structure(cell=cell, periodic=[True] * 3,
                     positions=np.array(pos), species=species)


def make_model(seed=0, acsf=TEST_ACSF, **kw):
    return PotentialModel.create(acsf=acsf, hidden=(10, 8), seed=seed, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
