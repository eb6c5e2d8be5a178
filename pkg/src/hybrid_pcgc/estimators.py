"""scikit-learn style front end.

``PriorNetwork`` and ``RefinerBase`` are the two offline training steps;
``HybridCodec`` overfits the enhancement layer in ``fit`` and codes in
``transform`` / ``inverse_transform``. Inputs are sequences of
:class:`~hybrid_pcgc.octree.PointCloud` or of ``(N, 3)`` integer arrays.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .assets import ModelAssets
from .autodiff import no_grad
from .dar import DarConfig
from .nn import as_param_tensors
from .octree import DEFAULT_COARSE_THRESHOLD, PointCloud, build_hierarchy
from .pipeline import TrainConfig, decode_gopc, encode_gopc, overfit_enhancement, pretrain_ppn, train_base
from .ppn import PpnConfig, ppn_pretrain_loss

__all__ = ["PriorNetwork", "RefinerBase", "HybridCodec", "as_clouds"]


def as_clouds(X, bitdepth: int | None = None) -> list:
    """Validate a sequence of clouds; raw arrays need ``bitdepth``."""
    if isinstance(X, PointCloud):
        X = [X]
    clouds = []
    for item in X:
        if isinstance(item, PointCloud):
            clouds.append(item)
        else:
            arr = np.asarray(item)
            depth = bitdepth if bitdepth is not None else max(1, int(arr.max()).bit_length())
            clouds.append(PointCloud(arr, depth))
    if not clouds:
        raise ValueError("expected at least one point cloud")
    return clouds


class PriorNetwork(BaseEstimator):
    """Frozen prior network, pretrained as a standalone occupancy predictor."""

    def __init__(self, k=3, C=32, lr=0.008, epochs=25, lr_floor=4e-4, coarse_threshold=DEFAULT_COARSE_THRESHOLD, random_state=0):
        self.k = k
        self.C = C
        self.lr = lr
        self.epochs = epochs
        self.lr_floor = lr_floor
        self.coarse_threshold = coarse_threshold
        self.random_state = random_state

    @property
    def config(self) -> PpnConfig:
        return PpnConfig(self.k, self.C)

    def fit(self, X, y=None, X_val=None):
        cfg = TrainConfig.pretrain(lr=self.lr, epochs=self.epochs, lr_floor=self.lr_floor, seed=self.random_state)
        val = as_clouds(X_val) if X_val is not None else None
        result = pretrain_ppn(as_clouds(X), self.config, cfg, val, self.coarse_threshold)
        self.params_ = {k: v.astype(np.float32) for k, v in result.params.items()}
        self.history_ = result.history
        self.val_history_ = result.val_history
        return self

    def score(self, X, y=None) -> float:
        """Negative mean bits per point (higher is better)."""
        check_is_fitted(self, "params_")
        params = as_param_tensors(self.params_, dtype=np.float64)
        with no_grad():
            losses = [float(ppn_pretrain_loss(build_hierarchy(c, self.coarse_threshold), params, self.config).data) for c in as_clouds(X)]
        return -float(np.mean(losses))


class RefinerBase(BaseEstimator):
    """DAR base layer trained on prediction bits with a fitted ``prior`` frozen."""

    def __init__(self, prior=None, k=1, C=16, hidden=16, lr=0.008, epochs=25, lr_floor=4e-4, coarse_threshold=DEFAULT_COARSE_THRESHOLD, random_state=0):
        self.prior = prior
        self.k = k
        self.C = C
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.lr_floor = lr_floor
        self.coarse_threshold = coarse_threshold
        self.random_state = random_state

    @property
    def config(self) -> DarConfig:
        return DarConfig(self.k, self.C, self.hidden)

    def fit(self, X, y=None, X_val=None):
        if self.prior is None:
            raise ValueError("RefinerBase needs a fitted PriorNetwork as `prior`")
        check_is_fitted(self.prior, "params_")
        cfg = TrainConfig.pretrain(lr=self.lr, epochs=self.epochs, lr_floor=self.lr_floor, seed=self.random_state)
        val = as_clouds(X_val) if X_val is not None else None
        result = train_base(as_clouds(X), self.prior.params_, self.prior.config, self.config, cfg, val, self.coarse_threshold)
        self.params_ = {k: v.astype(np.float32) for k, v in result.params.items()}
        self.history_ = result.history
        self.val_history_ = result.val_history
        return self

    def to_assets(self) -> ModelAssets:
        check_is_fitted(self, "params_")
        return ModelAssets(self.prior.config, self.prior.params_, self.config, self.params_)


class HybridCodec(BaseEstimator, TransformerMixin):
    """Lossless GoPC codec: ``fit`` overfits the enhancement layer,
    ``transform`` encodes to bytes, ``inverse_transform`` decodes.
    """

    def __init__(
        self,
        assets=None,
        epochs=26,
        lr=0.01,
        lr_floor=4e-4,
        smc=True,
        use_ppn=True,
        coarse_threshold=DEFAULT_COARSE_THRESHOLD,
        threads=1,
        random_state=0,
    ):
        self.assets = assets
        self.epochs = epochs
        self.lr = lr
        self.lr_floor = lr_floor
        self.smc = smc
        self.use_ppn = use_ppn
        self.coarse_threshold = coarse_threshold
        self.threads = threads
        self.random_state = random_state

    def _assets(self) -> ModelAssets:
        if self.assets is None:
            raise ValueError("HybridCodec needs pretrained assets (ModelAssets or a directory)")
        if isinstance(self.assets, ModelAssets):
            return self.assets
        return ModelAssets.load(self.assets)

    def _train_config(self) -> TrainConfig:
        return TrainConfig.overfit(lr=self.lr, epochs=self.epochs, lr_floor=self.lr_floor, seed=self.random_state)

    def fit(self, X, y=None):
        assets = self._assets()
        result = overfit_enhancement(
            as_clouds(X), assets, self._train_config(), self.smc, self.use_ppn, self.coarse_threshold, threads=self.threads
        )
        self.enhancement_ = result.enhancement
        self.overfit_ = result
        return self

    def transform(self, X) -> bytes:
        check_is_fitted(self, "enhancement_")
        result = encode_gopc(
            as_clouds(X),
            self._assets(),
            self._train_config(),
            self.smc,
            self.use_ppn,
            self.coarse_threshold,
            self.threads,
            enhancement=self.enhancement_,
        )
        self.report_ = result.report
        return result.data

    def fit_transform(self, X, y=None, **fit_params) -> bytes:
        result = encode_gopc(
            as_clouds(X), self._assets(), self._train_config(), self.smc, self.use_ppn, self.coarse_threshold, self.threads
        )
        self.enhancement_ = result.overfit.enhancement
        self.overfit_ = result.overfit
        self.report_ = result.report
        return result.data

    def inverse_transform(self, data: bytes) -> list:
        result = decode_gopc(data, self._assets(), self.threads)
        self.decode_report_ = result.report
        return result.frames

    encode = fit_transform
    decode = inverse_transform
