import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import TINY_DAR, TINY_PPN
from hybrid_pcgc import datasets
from hybrid_pcgc.estimators import HybridCodec, PriorNetwork, RefinerBase, as_clouds
from hybrid_pcgc.octree import PointCloud


def test_as_clouds_accepts_arrays_and_clouds():
    pc = PointCloud(np.array([[1, 2, 3]]), 4)
    out = as_clouds([pc, np.array([[5, 6, 7]])])
    assert out[0] is pc and out[1].bitdepth == 3
    assert as_clouds(pc) == [pc]
    with pytest.raises(ValueError):
        as_clouds([])


def test_get_set_params_and_clone():
    est = HybridCodec(epochs=3, smc=False)
    assert est.get_params()["epochs"] == 3
    other = clone(est).set_params(epochs=5)
    assert other.epochs == 5 and est.epochs == 3 and not other.smc


def test_unfitted_errors():
    with pytest.raises(NotFittedError):
        PriorNetwork().score([PointCloud(np.zeros((1, 3), int), 2)])
    with pytest.raises(NotFittedError):
        HybridCodec().transform([PointCloud(np.zeros((1, 3), int), 2)])
    with pytest.raises(ValueError):
        RefinerBase().fit([PointCloud(np.zeros((1, 3), int), 2)])


def test_train_and_code_pipeline(tmp_path):
    clouds = datasets.toy_dataset(2, seed=3, bitdepth=5)
    prior = PriorNetwork(k=TINY_PPN.k, C=TINY_PPN.C, epochs=2, coarse_threshold=8).fit(clouds)
    assert len(prior.history_) == 2 and prior.score(clouds) < 0
    base = RefinerBase(prior, k=TINY_DAR.k, C=TINY_DAR.C, hidden=TINY_DAR.hidden, epochs=2, coarse_threshold=8).fit(clouds)
    assets = base.to_assets()
    assets.save(tmp_path)

    gopc = datasets.gopc_sequence(2, seed=4, bitdepth=5)
    codec = HybridCodec(assets=str(tmp_path), epochs=1)
    data = codec.fit_transform(gopc)
    assert codec.report_.total_bits == 8 * len(data)
    decoded = codec.inverse_transform(data)
    assert all(np.array_equal(a.coords, b.coords) for a, b in zip(decoded, gopc))
    # fit + transform reproduces fit_transform
    assert HybridCodec(assets=assets, epochs=1).fit(gopc).transform(gopc) == data


def test_missing_assets():
    with pytest.raises(ValueError):
        HybridCodec().fit([PointCloud(np.zeros((1, 3), int), 2)])
