import numpy as np
import pytest

from hybrid_pcgc import datasets
from hybrid_pcgc.autodiff import CENTER_TAP, CoordSet, SparseTensor, Tensor, no_grad, ops
from hybrid_pcgc.autodiff import sparse as sps
from hybrid_pcgc.nn import as_param_tensors, fem_forward, init_params
from hybrid_pcgc.octree import PointCloud, all_stage_bits, build_hierarchy
from hybrid_pcgc.ppn import (
    PpnConfig,
    ppn_mask_update,
    ppn_open_scale,
    ppn_param_shapes,
    ppn_prior,
    ppn_pretrain_loss,
    ppn_stage_priors,
)

CFG = PpnConfig(k=1, C=8)


def params(seed=0, cfg=CFG):
    return as_param_tensors(init_params(ppn_param_shapes(cfg), np.random.default_rng(seed)))


def coords(n=20, depth=3, seed=0):
    rng = np.random.default_rng(seed)
    return CoordSet(np.unique(rng.integers(0, 1 << depth, (n, 3)), axis=0), depth)


class TestOpenScale:
    def test_single_point_uses_center_tap_only(self):
        p = params(1)
        c = CoordSet(np.array([[1, 1, 1]]), 2)
        state = ppn_open_scale(c, p, CFG)
        # zeroing every off-centre tap must not change anything
        masked = {}
        for n, t in p.items():
            arr = t.data.copy()
            if n.endswith(".w") and arr.shape[0] == 27:
                keep = arr[CENTER_TAP].copy()
                arr[:] = 0
                arr[CENTER_TAP] = keep
            masked[n] = Tensor(arr)
        other = ppn_open_scale(c, masked, CFG)
        np.testing.assert_array_equal(state.I.data, other.I.data)
        np.testing.assert_array_equal(state.T.data, other.T.data)

    def test_deterministic(self):
        c = coords()
        a, b = ppn_open_scale(c, params(), CFG), ppn_open_scale(coords(), params(), CFG)
        assert a.T.data.tobytes() == b.T.data.tobytes()

    def test_zero_weights_rows_equal_bias_chain(self):
        shapes = ppn_param_shapes(CFG)
        rng = np.random.default_rng(2)
        arrays = {n: (np.zeros(s) if n.endswith(".w") else rng.standard_normal(s)) for n, s in shapes}
        p = as_param_tensors(arrays)
        c = coords(30)
        state = ppn_open_scale(c, p, CFG)
        assert np.all(state.I.data == state.I.data[0])

        # derived: with zero kernels every sconv emits its bias, so
        # FEM(x) = b_in + concat(b_a2, b_b3) regardless of x
        def fem_bias(prefix):
            return arrays[f"{prefix}.in.b"] + np.concatenate([arrays[f"{prefix}.irn0.a2.b"], arrays[f"{prefix}.irn0.b3.b"]])

        np.testing.assert_allclose(state.I.data[0], fem_bias("ppn.open"))
        np.testing.assert_allclose(state.T.data[0], fem_bias("ppn.stage"))


class TestMaskUpdate:
    def _state(self, T_data):
        c = CoordSet(np.array([[0, 0, 0], [1, 1, 1]]), 1)
        I = SparseTensor(c, Tensor(np.zeros((2, CFG.C))))
        T = SparseTensor(c, Tensor(np.asarray(T_data, dtype=np.float64)))
        from hybrid_pcgc.ppn import PpnState

        return PpnState(I, T)

    def test_signs_and_magnitude(self):
        rng = np.random.default_rng(0)
        T = rng.standard_normal((2, CFG.C))
        new = ppn_mask_update(self._state(T), np.array([1, 0]), params(), CFG)
        sp = np.log1p(np.exp(T))
        np.testing.assert_allclose(new.I.data[0], sp[0])
        np.testing.assert_allclose(new.I.data[1], -sp[1])

    def test_zero_T_gives_ln2(self):
        new = ppn_mask_update(self._state(np.zeros((2, CFG.C))), np.array([1, 0]), params(), CFG)
        np.testing.assert_allclose(new.I.data, [[np.log(2)] * CFG.C, [-np.log(2)] * CFG.C])

    def test_T_recomputed_from_new_I(self):
        p = params(3)
        new = ppn_mask_update(self._state(np.ones((2, CFG.C))), np.array([1, 1]), p, CFG)
        np.testing.assert_array_equal(new.T.data, fem_forward(new.I, CFG.stage_fem, p, "ppn.stage").data)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ppn_mask_update(self._state(np.zeros((2, CFG.C))), np.array([1, 0, 1]), params(), CFG)


class TestPrior:
    def test_zero_head_constant_logit(self):
        p = params()
        p["ppn.head.w"] = Tensor(np.zeros((27, CFG.C, 1)))
        p["ppn.head.b"] = Tensor(np.array([0.7]))
        out = ppn_prior(ppn_open_scale(coords(), p, CFG), p)
        assert out.C == 1 and np.all(out.data == 0.7)

    def test_sigmoid_in_open_interval(self):
        out = ppn_prior(ppn_open_scale(coords(), params(4), CFG), params(4))
        s = 1 / (1 + np.exp(-out.data))
        assert np.all((s > 0) & (s < 1))

    def test_matches_hand_gather(self):
        pts = np.array([[0, 0, 0], [0, 0, 1], [0, 1, 1], [2, 2, 2], [3, 3, 3]])
        c = CoordSet(pts, 2)
        p = params(5)
        state = ppn_open_scale(c, p, CFG)
        w, b = p["ppn.head.w"].data, p["ppn.head.b"].data
        index = {tuple(q): i for i, q in enumerate(pts.tolist())}
        offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
        expect = np.tile(b, (5, 1))
        for i, q in enumerate(pts.tolist()):
            for k, o in enumerate(offsets):
                n = index.get((q[0] + o[0], q[1] + o[1], q[2] + o[2]))
                if n is not None:
                    expect[i] += state.T.data[n] @ w[k]
        np.testing.assert_allclose(ppn_prior(state, p).data, expect, rtol=1e-12)


def test_stage_causality():
    c = coords(25, seed=7)
    rng = np.random.default_rng(8)
    bits = rng.integers(0, 2, (8, len(c)))
    p = params(6)
    ref = ppn_stage_priors(c, bits, p, CFG)
    for j in range(8):
        other = bits.copy()
        other[j:] = rng.integers(0, 2, other[j:].shape)
        got = ppn_stage_priors(c, other, p, CFG)
        for jj in range(j + 1):
            np.testing.assert_array_equal(got[jj].data, ref[jj].data)


class TestPretrainLoss:
    def _big_logit_params(self, bias):
        p = params()
        p["ppn.head.w"] = Tensor(np.zeros((27, CFG.C, 1)))
        p["ppn.head.b"] = Tensor(np.array([bias]))
        return p

    def test_constant_zero_logit(self):
        cloud = datasets.toy_dataset(1, seed=0, bitdepth=5)[0]
        h = build_hierarchy(cloud, 8)
        loss = float(ppn_pretrain_loss(h, self._big_logit_params(0.0), CFG).data)
        assert loss == pytest.approx(h.n_candidates() / h.n_points, rel=1e-12)

    def test_perfect_logits(self):
        # a full block is perfectly predicted by a huge positive logit
        cloud = PointCloud(np.array([(x, y, z) for x in range(4) for y in range(4) for z in range(4)]), 2)
        h = build_hierarchy(cloud, 1)
        assert float(ppn_pretrain_loss(h, self._big_logit_params(40.0), CFG).data) < 1e-6

    def test_cache_gives_same_value(self):
        cloud = datasets.toy_dataset(1, seed=1, bitdepth=5)[0]
        h = build_hierarchy(cloud, 8)
        cache = {}
        a = float(ppn_pretrain_loss(h, params(), CFG, cache).data)
        b = float(ppn_pretrain_loss(h, params(), CFG, cache).data)
        assert a == b and cache

    def test_hand_summed(self):
        cloud = datasets.toy_dataset(1, seed=2, bitdepth=4)[0]
        h = build_hierarchy(cloud, 4)
        p = params(9)
        total = 0.0
        for i in range(h.L):
            c = CoordSet.from_cloud(h[i + 1])
            bits = all_stage_bits(h[i], h[i + 1])
            for j, logit in enumerate(ppn_stage_priors(c, bits, p, CFG)):
                q = 1 / (1 + np.exp(-logit.data))
                total += -np.sum(bits[j] * np.log2(q) + (1 - bits[j]) * np.log2(1 - q))
        assert float(ppn_pretrain_loss(h, p, CFG).data) == pytest.approx(total / len(cloud), rel=1e-10)


@pytest.mark.slow
class TestTrainedPpn:
    def test_loss_decreases_over_epochs(self, trained):
        _, info = trained
        if "ppn" not in info:
            pytest.skip("reusing externally trained assets")
        hist = info["ppn"].history
        assert hist[-1] < hist[0]
        # non-strict trend over 5-epoch windows
        windows = [np.mean(hist[k : k + 5]) for k in range(0, len(hist) - 4, 5)]
        assert all(b <= a for a, b in zip(windows, windows[1:]))

    def test_monotone_information_trend(self, trained_assets):
        """Mean bits per stage, averaged over held-out clouds, trends down in j."""
        p = as_param_tensors(trained_assets.ppn_params, dtype=np.float64)
        cfg = trained_assets.ppn_config
        per_stage = np.zeros(8)
        clouds = datasets.toy_dataset(20, seed=4242, bitdepth=5)
        with no_grad():
            for cloud in clouds:
                h = build_hierarchy(cloud)
                for i in range(h.L):
                    c = CoordSet.from_cloud(h[i + 1])
                    bits = all_stage_bits(h[i], h[i + 1])
                    for j, logit in enumerate(ppn_stage_priors(c, bits, p, cfg)):
                        per_stage[j] += float(ops.bce_bits(ops.sigmoid(logit), bits[j]).data) / len(c)
        per_stage /= len(clouds)
        slope = np.polyfit(np.arange(8), per_stage, 1)[0]
        assert slope < 0
        assert per_stage[4:].mean() < per_stage[:4].mean()
