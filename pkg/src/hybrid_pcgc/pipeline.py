"""Training, enhancement overfitting and GoPC encode/decode.

Lifecycle: :func:`pretrain_ppn` -> :func:`train_base` (both offline, producing
:class:`~hybrid_pcgc.assets.ModelAssets`) -> :func:`overfit_enhancement` per
GoPC -> :func:`encode_gopc` / :func:`decode_gopc`.

Training runs in float64. Everything that influences coded bits (PPN priors,
DAR probabilities, dequantised parameters) runs in float32 through one shared
stage loop, so encoder and decoder see identical probabilities.
"""

from __future__ import annotations

import copy
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import datasets
from .assets import ModelAssets
from .autodiff import CoordSet, Tensor, grad, no_grad, ops
from .coding.arith import CorruptStreamError, ac_decode, ac_encode, ideal_bits, quantize_probs
from .coding.bitstream import FrameHeader, StreamHeader, read_bitstream, write_bitstream
from .dar import DarConfig, DarScaleContext, _prior_tensor, dar_global, dar_param_shapes, dar_predict, dar_scale_bits, dar_stage_features
from .nn import ParamStore, as_param_tensors, init_params
from .optim import Adam
from .octree import (
    DEFAULT_COARSE_THRESHOLD,
    CorruptOctreeError,
    PointCloud,
    all_stage_bits,
    build_hierarchy,
    lsop_features,
    reconstruct_scale,
)
from .ppn import PpnConfig, ppn_mask_update, ppn_open_scale, ppn_param_shapes, ppn_pretrain_loss, ppn_prior, ppn_stage_priors
from .smc import (
    QMAX,
    FactorizedDensity,
    decode_params,
    decode_raw_params,
    encode_params,
    encode_raw_params,
    fit_density,
    rate_proxy,
    ste_quantize,
)

__all__ = [
    "TrainConfig",
    "Adam",
    "ScaleData",
    "FrameData",
    "prepare_frame",
    "attach_priors",
    "total_loss",
    "TrainResult",
    "pretrain_ppn",
    "train_base",
    "Enhancement",
    "OverfitResult",
    "overfit_enhancement",
    "RateReport",
    "EncodeResult",
    "DecodeResult",
    "encode_gopc",
    "decode_gopc",
    "frequency_baseline_bits",
    "effective_params",
]


# --------------------------------------------------------------------------- training config


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser settings; defaults are the enhancement-overfitting column of the
    reference hyperparameter table.

    The learning rate decays geometrically once per epoch from ``lr`` to
    ``lr_floor`` at the last epoch. ``gamma`` is recorded for provenance only:
    applied literally as a per-step factor it would zero the rate immediately.
    """

    lr: float = 0.01
    epochs: int = 26
    gamma: float = 1e-4
    lr_floor: float = 4e-4
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.lr_floor <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    @classmethod
    def overfit(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def pretrain(cls, **overrides) -> "TrainConfig":
        return cls(**{"lr": 0.008, "epochs": 25, "gamma": 1e-4, "lr_floor": 4e-4, **overrides})

    def lr_at(self, epoch: int) -> float:
        if self.epochs <= 1:
            return self.lr
        floor = min(self.lr_floor, self.lr)
        return self.lr * (floor / self.lr) ** (epoch / (self.epochs - 1))


# --------------------------------------------------------------------------- frame preparation


@dataclass
class ScaleData:
    """Everything needed to code the children of one scale.

    ``index`` is the child scale ``i``; ``parents`` is ``x^{i+1}``.
    """

    index: int
    parents: PointCloud
    coords: CoordSet
    lsop: np.ndarray
    bits: np.ndarray
    priors: list | None = None  # eight float32 logit vectors from the PPN


@dataclass
class FrameData:
    cloud: PointCloud
    coarse: PointCloud
    scales: list  # coding order: i = L-1 down to 0

    @property
    def n_points(self) -> int:
        return len(self.cloud)

    def n_candidates(self) -> int:
        return 8 * sum(len(s.parents) for s in self.scales)


def prepare_frame(pc: PointCloud, coarse_threshold: int = DEFAULT_COARSE_THRESHOLD) -> FrameData:
    h = build_hierarchy(pc, coarse_threshold)
    scales = []
    for i in range(h.L - 1, -1, -1):
        parents = h[i + 1]
        scales.append(
            ScaleData(i, parents, CoordSet.from_cloud(parents), lsop_features(parents), all_stage_bits(h[i], parents, check=False))
        )
    return FrameData(pc, h[h.L], scales)


def attach_priors(frame: FrameData, ppn_params: dict, ppn_cfg: PpnConfig) -> float:
    """Cache teacher-forced float32 PPN priors on every scale; returns seconds spent."""
    params = as_param_tensors(ppn_params, dtype=np.float32)
    t0 = time.perf_counter()
    with no_grad():
        for s in frame.scales:
            s.priors = [p.data.copy() for p in ppn_stage_priors(s.coords, s.bits, params, ppn_cfg)]
    return time.perf_counter() - t0


def _prepare(frames, coarse_threshold, assets: ModelAssets | None, use_ppn: bool) -> tuple:
    prepared = [prepare_frame(f, coarse_threshold) for f in frames]
    prior_time = 0.0
    if use_ppn and assets is not None:
        for fr in prepared:
            prior_time += attach_priors(fr, assets.ppn_params, assets.ppn_config)
    return prepared, prior_time


# --------------------------------------------------------------------------- losses


def frame_bits(frame: FrameData, params: dict, dar_cfg: DarConfig, use_ppn: bool = True) -> Tensor:
    """Teacher-forced estimated geometry bits of one frame (sum over scales and stages)."""
    dtype = params["dar.head.w"].dtype
    total = Tensor(np.zeros((), dtype=dtype))
    for s in frame.scales:
        priors = None
        if use_ppn:
            if s.priors is None:
                raise ValueError("frame has no cached PPN priors; call attach_priors first")
            priors = [p.astype(dtype) for p in s.priors]
        for b in dar_scale_bits(s.coords, s.lsop, s.bits, priors, params, dar_cfg):
            total = ops.add(total, b)
    return total


def total_loss(frames, params: dict, dar_cfg: DarConfig, model_bits: Tensor | None = None, use_ppn: bool = True) -> Tensor:
    """Mean per-frame bits/point plus ``model_bits / (mean N * T)``."""
    T = len(frames)
    loss = None
    for f in frames:
        term = ops.mul(frame_bits(f, params, dar_cfg, use_ppn), 1.0 / f.n_points)
        loss = term if loss is None else ops.add(loss, term)
    loss = ops.mul(loss, 1.0 / T)
    if model_bits is not None:
        n_mean = float(np.mean([f.n_points for f in frames]))
        loss = ops.add(loss, ops.mul(model_bits, 1.0 / (n_mean * T)))
    return loss


# --------------------------------------------------------------------------- offline training


@dataclass
class TrainResult:
    params: dict
    history: list  # mean training loss per epoch (bits/point)
    val_history: list = field(default_factory=list)
    best_epoch: int = -1


def _check_finite(value: float, epoch: int, seed: int) -> None:
    if not np.isfinite(value):
        raise FloatingPointError(f"training diverged at epoch {epoch} (seed {seed})")


def _fit(shapes, loss_fn, items, val_fn, cfg: TrainConfig, init: dict | None = None, augment=None) -> TrainResult:
    """Per-item optimiser steps over shuffled ``items``; ``augment(item, rng)``
    (if given) transforms each item before every step."""
    rng = np.random.default_rng(cfg.seed)
    arrays = init_params(shapes, rng) if init is None else {k: np.array(v, dtype=np.float64) for k, v in init.items()}
    leaves = as_param_tensors(arrays, requires_grad=True)
    names = [n for n, _ in shapes]
    opt = Adam(len(names))
    history, val_history = [], []
    best, best_score, best_epoch = copy.deepcopy(arrays), np.inf, -1
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        losses = []
        for k in rng.permutation(len(items)):
            item = items[k] if augment is None else augment(items[k], rng)
            loss = loss_fn(item, leaves)
            _check_finite(float(loss.data), epoch, cfg.seed)
            grads = grad(loss, [leaves[n] for n in names])
            opt.step([leaves[n].data for n in names], grads, lr)
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
        score = history[-1]
        if val_fn is not None:
            with no_grad():
                score = val_fn(leaves)
            val_history.append(score)
        _check_finite(score, epoch, cfg.seed)
        if score < best_score:
            best_score, best_epoch = score, epoch
            best = {n: leaves[n].data.copy() for n in names}
    return TrainResult(best, history, val_history, best_epoch)


def pretrain_ppn(
    clouds,
    ppn_cfg: PpnConfig = PpnConfig(),
    cfg: TrainConfig | None = None,
    val_clouds=None,
    coarse_threshold: int = DEFAULT_COARSE_THRESHOLD,
    augment: bool = True,
) -> TrainResult:
    """Fit the PPN as a standalone occupancy predictor (bits/point loss).

    With ``augment`` every step sees a randomly flipped, permuted and shifted
    copy of its cloud. Returns the weights of the epoch with the lowest
    validation loss (training loss when no validation clouds are given).
    """
    cfg = TrainConfig.pretrain() if cfg is None else cfg

    def loss_fn(item, params):
        h, cache = item
        return ppn_pretrain_loss(h, params, ppn_cfg, cache)

    if augment:
        items = list(clouds)

        def aug(c, rng):
            return build_hierarchy(datasets.augment_cloud(c, rng), coarse_threshold), None

    else:
        items = [(build_hierarchy(c, coarse_threshold), {}) for c in clouds]
        aug = None

    val_fn = None
    if val_clouds:
        val_items = [(build_hierarchy(c, coarse_threshold), {}) for c in val_clouds]

        def val_fn(params):
            return float(np.mean([loss_fn(it, params).data for it in val_items]))

    return _fit(ppn_param_shapes(ppn_cfg), loss_fn, items, val_fn, cfg, augment=aug)


def train_base(
    clouds,
    ppn_params: dict,
    ppn_cfg: PpnConfig = PpnConfig(),
    dar_cfg: DarConfig = DarConfig(),
    cfg: TrainConfig | None = None,
    val_clouds=None,
    coarse_threshold: int = DEFAULT_COARSE_THRESHOLD,
    augment: bool = True,
) -> TrainResult:
    """Fit the DAR base layer on prediction bits only, with the PPN frozen.

    ``augment`` as in :func:`pretrain_ppn`.
    """
    cfg = TrainConfig.pretrain() if cfg is None else cfg

    def prep(c):
        fr = prepare_frame(c, coarse_threshold)
        attach_priors(fr, ppn_params, ppn_cfg)
        return fr

    def loss_fn(fr, params):
        return ops.mul(frame_bits(fr, params, dar_cfg), 1.0 / fr.n_points)

    if augment:
        items = list(clouds)

        def aug(c, rng):
            return prep(datasets.augment_cloud(c, rng))

    else:
        items = [prep(c) for c in clouds]
        aug = None

    val_fn = None
    if val_clouds:
        val_frames = [prep(c) for c in val_clouds]

        def val_fn(params):
            return float(np.mean([loss_fn(f, params).data for f in val_frames]))

    return _fit(dar_param_shapes(dar_cfg), loss_fn, items, val_fn, cfg, augment=aug)


# --------------------------------------------------------------------------- enhancement layer


def _spike_density() -> FactorizedDensity:
    """Density concentrating all mass on 0: the cheapest way to send an all-zero layer."""
    d = FactorizedDensity()
    pieces = [np.full(int(np.prod(shape)), 20.0 if name[0] == "H" else 0.0) for name, shape in d.shapes]
    return FactorizedDensity(np.concatenate(pieces)).quantized()


@dataclass(frozen=True)
class Enhancement:
    """A transmittable enhancement layer.

    With SMC: integer symbols ``Q``, float32 ``fa`` and a header-exact density.
    Without SMC: a raw float32 vector in ``raw``.
    """

    Q: np.ndarray | None = None
    fa: float = 0.0
    density: FactorizedDensity | None = None
    raw: np.ndarray | None = None

    @property
    def smc(self) -> bool:
        return self.Q is not None

    @property
    def count(self) -> int:
        return len(self.Q) if self.smc else len(self.raw)

    @classmethod
    def zero(cls, count: int, smc: bool = True) -> "Enhancement":
        if smc:
            return cls(Q=np.zeros(count, dtype=np.int64), fa=0.0, density=_spike_density())
        return cls(raw=np.zeros(count, dtype=np.float32))

    @classmethod
    def from_vector(cls, v, fa: float | None = None, density: FactorizedDensity | None = None, qmax: int = QMAX) -> "Enhancement":
        """Quantise a float vector (SMC when ``fa`` is given, raw float32 otherwise)."""
        v = np.asarray(v, dtype=np.float64)
        if fa is None:
            return cls(raw=v.astype(np.float32))
        fa32 = float(np.float32(fa))
        Q = np.clip(np.round(np.exp(fa32) * v), -qmax, qmax).astype(np.int64)
        if not Q.any():
            return cls.zero(len(v), smc=True)
        return cls(Q=Q, fa=fa32, density=fit_density(Q, density))

    def values(self) -> np.ndarray:
        """Float32 enhancement vector exactly as the decoder installs it."""
        if self.smc:
            return (self.Q.astype(np.float64) / np.exp(np.float64(self.fa))).astype(np.float32)
        return np.asarray(self.raw, dtype=np.float32)

    def stream(self) -> bytes:
        if self.smc:
            return encode_params(self.Q, self.density, self.fa)
        return encode_raw_params(self.raw)

    @classmethod
    def from_stream(cls, data: bytes, smc: bool) -> "Enhancement":
        if smc:
            Q, fa, density, n = decode_params(data)
        else:
            raw, n = decode_raw_params(data)
        if n != len(data):
            raise CorruptStreamError(f"parameter stream has {len(data) - n} trailing bytes")
        return cls(Q=Q, fa=fa, density=density) if smc else cls(raw=raw)


def effective_params(assets: ModelAssets, enhancement: Enhancement | None) -> dict:
    """Float32 DAR parameters ``base + enhancement`` as inference tensors."""
    store = ParamStore(dar_param_shapes(assets.dar_config), assets.base_params, dtype=np.float32)
    if enhancement is not None:
        if enhancement.count != store.param_count:
            raise ValueError(f"enhancement has {enhancement.count} values, DAR has {store.param_count}")
        store.set_enhancement(enhancement.values())
    return as_param_tensors(store.effective_all(), dtype=np.float32)


# --------------------------------------------------------------------------- stage loop


def _run_scale(coords: CoordSet, lsop, params, dar_cfg, prior_fn, bits_fn) -> list:
    """Shared encoder/decoder loop over the eight stages of one scale.

    ``prior_fn(j, decoded)`` returns the stage-``j`` prior logits (or ``None``);
    ``bits_fn(j, p)`` returns the stage bits given probabilities ``p``.
    """
    with no_grad():
        ctx = DarScaleContext(dar_global(coords, lsop, params, dar_cfg), [])
        for j in range(1, 9):
            prior = _prior_tensor(coords, prior_fn(j, ctx.decoded), np.float32)
            p = dar_predict(dar_stage_features(ctx, j, params, dar_cfg), prior, params).data
            ctx.decoded.append(np.asarray(bits_fn(j, p), dtype=np.uint8))
    return ctx.decoded


class _LivePrior:
    """Decoder-side PPN: priors computed stage by stage from decoded bits."""

    def __init__(self, coords, params, cfg):
        self.params, self.cfg = params, cfg
        self.state = ppn_open_scale(coords, params, cfg)
        self.seconds = 0.0

    def __call__(self, j, decoded):
        t0 = time.perf_counter()
        with no_grad():
            if j > 1:
                self.state = ppn_mask_update(self.state, decoded[-1], self.params, self.cfg)
            out = ppn_prior(self.state, self.params).feats.data.reshape(-1)
        self.seconds += time.perf_counter() - t0
        return out


def _encode_frame(frame: FrameData, params, dar_cfg, use_ppn: bool) -> tuple:
    """Occupancy streams of one frame plus per-scale seconds."""
    streams, seconds = [], {}
    for s in frame.scales:
        t0 = time.perf_counter()
        out = []

        def bits_fn(j, p, s=s, out=out):
            out.append(ac_encode(s.bits[j - 1], p))
            return s.bits[j - 1]

        prior_fn = (lambda j, _d, s=s: s.priors[j - 1]) if use_ppn else (lambda j, _d: None)
        _run_scale(s.coords, s.lsop, params, dar_cfg, prior_fn, bits_fn)
        streams.append(tuple(out))
        seconds[s.index] = time.perf_counter() - t0
    return streams, seconds


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------- rate report


@dataclass
class RateReport:
    """Bit allocation and wall-clock breakdown of one coded GoPC.

    ``scale_bits`` maps child-scale index ``i`` (0 = finest) to occupancy bits
    summed over frames. Header + model + scale bits equals the file size.
    """

    n_points: int
    n_frames: int
    header_bits: int
    model_bits: int
    scale_bits: dict
    stage_bits: dict = field(default_factory=dict)  # (i, j) -> bits
    times: dict = field(default_factory=dict)  # phase -> seconds

    @property
    def geometry_bits(self) -> int:
        return int(sum(self.scale_bits.values()))

    @property
    def total_bits(self) -> int:
        return self.header_bits + self.model_bits + self.geometry_bits

    @property
    def bpp(self) -> float:
        return self.total_bits / self.n_points

    @property
    def model_bpp(self) -> float:
        return self.model_bits / self.n_points

    @property
    def geometry_bpp(self) -> float:
        return self.geometry_bits / self.n_points

    def to_dict(self) -> dict:
        return {
            "n_points": self.n_points,
            "n_frames": self.n_frames,
            "total_bits": self.total_bits,
            "bpp": self.bpp,
            "header_bits": self.header_bits,
            "model_bits": self.model_bits,
            "model_bpp": self.model_bpp,
            "geometry_bits": self.geometry_bits,
            "geometry_bpp": self.geometry_bpp,
            "scale_bits": {str(k): v for k, v in sorted(self.scale_bits.items())},
            "share": {
                "header": self.header_bits / self.total_bits,
                "model": self.model_bits / self.total_bits,
                **{f"scale_{k}": v / self.total_bits for k, v in sorted(self.scale_bits.items())},
            },
            "times": dict(self.times),
        }


def _report(bs_bytes: int, header_bytes: int, param_stream: bytes, frames_scales, occupancy, n_points, times) -> RateReport:
    scale_bits, stage_bits = {}, {}
    for indices, streams in zip(frames_scales, occupancy):
        for i, stages in zip(indices, streams):
            for j, st in enumerate(stages, start=1):
                scale_bits[i] = scale_bits.get(i, 0) + 8 * len(st)
                stage_bits[(i, j)] = stage_bits.get((i, j), 0) + 8 * len(st)
    report = RateReport(n_points, len(occupancy), 8 * header_bytes, 8 * len(param_stream), scale_bits, stage_bits, times)
    assert report.total_bits == 8 * bs_bytes
    return report


# --------------------------------------------------------------------------- overfitting


@dataclass
class OverfitResult:
    enhancement: Enhancement
    trajectory: list  # dicts: epoch, seconds, bpp, loss
    chosen_epoch: int
    trained_fa: float = float("nan")  # learned log step-inverse after the last epoch (SMC only)


def _assemble(prepared, assets: ModelAssets, enh: Enhancement, use_ppn: bool, threads: int) -> tuple:
    """Code every frame with ``enh`` installed; returns (file bytes, param stream, occupancy, times)."""
    times = {}
    t0 = time.perf_counter()
    param_stream = enh.stream()
    times["model"] = time.perf_counter() - t0
    params = effective_params(assets, enh)
    coded = _map(lambda f: _encode_frame(f, params, assets.dar_config, use_ppn), prepared, threads)
    for _, seconds in coded:
        for i, sec in seconds.items():
            times[f"scale_{i}"] = times.get(f"scale_{i}", 0.0) + sec
    occupancy = [streams for streams, _ in coded]
    header = StreamHeader(
        prepared[0].cloud.bitdepth,
        enh.smc,
        use_ppn,
        assets.checksum,
        tuple(
            FrameHeader(f.coarse.coords, tuple(tuple(len(b) for b in st) for st in streams))
            for f, streams in zip(prepared, occupancy)
        ),
    )
    return write_bitstream(header, param_stream, occupancy), param_stream, occupancy, times


def _candidate_bits(prepared, assets, enh: Enhancement, use_ppn, threads) -> int:
    return 8 * len(_assemble(prepared, assets, enh, use_ppn, threads)[0])


def overfit_enhancement(
    frames,
    assets: ModelAssets,
    cfg: TrainConfig = TrainConfig(),
    smc: bool = True,
    use_ppn: bool = True,
    coarse_threshold: int = DEFAULT_COARSE_THRESHOLD,
    track: bool = False,
    threads: int = 1,
    prepared=None,
) -> OverfitResult:
    """Fit the enhancement layer of one GoPC with base and PPN frozen.

    Loss per optimizer step (one step per frame, frames in order) is the frame's
    bits/point plus the SMC rate estimate divided by ``mean N * T``. The result
    is whichever of the zero layer and the trained layer(s) gives the smaller
    coded file; with ``track`` every epoch is a candidate and the trajectory
    records its exact coded bpp and the elapsed training time.
    """
    if prepared is None:
        prepared, _ = _prepare(frames, coarse_threshold, assets, use_ppn)
    T = len(prepared)
    n_total = sum(f.n_points for f in prepared)
    n_mean = n_total / T
    rng = np.random.default_rng(cfg.seed)
    store = ParamStore(dar_param_shapes(assets.dar_config), assets.base_params, dtype=np.float64)
    base = as_param_tensors(store.base)

    v = Tensor(np.zeros(store.param_count), requires_grad=True, name="enhancement")
    fa = Tensor(np.array(np.log(16.0)), requires_grad=True, name="Fa")
    density = FactorizedDensity(init_scale=1.0, seed=cfg.seed)
    dvec = Tensor(density.vector.copy(), requires_grad=True, name="density")
    leaves = [v, fa, dvec] if smc else [v]
    opt = Adam(len(leaves))

    def snapshot() -> Enhancement:
        if not smc:
            return Enhancement.from_vector(v.data)
        return Enhancement.from_vector(v.data, float(fa.data), FactorizedDensity(dvec.data.copy()))

    zero = Enhancement.zero(store.param_count, smc)
    candidates = [(0, zero)]
    trajectory = []
    train_seconds = 0.0
    if track or cfg.epochs == 0:
        t0 = time.perf_counter()
        bits = _candidate_bits(prepared, assets, zero, use_ppn, threads)
        trajectory.append({"epoch": 0, "seconds": time.perf_counter() - t0, "bpp": bits / n_total, "loss": float("nan")})
    scores = {0: trajectory[0]["bpp"]} if trajectory else {}
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        losses = []
        for f in prepared:
            if smc:
                v_hat = ops.mul(ste_quantize(v, fa), ops.exp(ops.neg(fa)))
                model_bits = rate_proxy(v, fa, dvec, density, rng)
            else:
                v_hat, model_bits = v, None
            params = store.structure_tensor(v_hat, base=base)
            loss = ops.mul(frame_bits(f, params, assets.dar_config, use_ppn), 1.0 / f.n_points)
            if model_bits is not None:
                loss = ops.add(loss, ops.mul(model_bits, 1.0 / (n_mean * T)))
            _check_finite(float(loss.data), epoch, cfg.seed)
            grads = grad(loss, leaves)
            opt.step([x.data for x in leaves], grads, lr)
            losses.append(float(loss.data))
        train_seconds += time.perf_counter() - t0
        if track or epoch == cfg.epochs - 1:
            cand = snapshot()
            candidates.append((epoch + 1, cand))
            if track:
                t1 = time.perf_counter()
                bits = _candidate_bits(prepared, assets, cand, use_ppn, threads)
                scores[epoch + 1] = bits / n_total
                trajectory.append(
                    {"epoch": epoch + 1, "seconds": train_seconds + time.perf_counter() - t1, "bpp": bits / n_total, "loss": float(np.mean(losses))}
                )
    for ep, cand in candidates:
        if ep not in scores:
            scores[ep] = _candidate_bits(prepared, assets, cand, use_ppn, threads) / n_total
    chosen = min(scores, key=lambda e: (scores[e], e))
    trained_fa = float(fa.data) if smc else float("nan")
    return OverfitResult(dict(candidates)[chosen], trajectory, chosen, trained_fa)


# --------------------------------------------------------------------------- encode / decode


@dataclass
class EncodeResult:
    data: bytes
    report: RateReport
    overfit: OverfitResult | None = None


@dataclass
class DecodeResult:
    frames: list
    report: RateReport


def _check_frames(frames) -> int:
    if not frames:
        raise ValueError("a GoPC needs at least one frame")
    depths = {f.bitdepth for f in frames}
    if len(depths) != 1:
        raise ValueError(f"all frames of a GoPC must share one bitdepth, got {sorted(depths)}")
    return depths.pop()


def encode_gopc(
    frames,
    assets: ModelAssets,
    cfg: TrainConfig = TrainConfig(),
    smc: bool = True,
    use_ppn: bool = True,
    coarse_threshold: int = DEFAULT_COARSE_THRESHOLD,
    threads: int = 1,
    enhancement: Enhancement | None = None,
    track: bool = False,
) -> EncodeResult:
    """Overfit (unless ``enhancement`` is given), then code every frame."""
    bitdepth = _check_frames(frames)
    t_start = time.perf_counter()
    prepared, prior_time = _prepare(frames, coarse_threshold, assets, use_ppn)
    times = {"prior": prior_time}
    overfit = None
    t0 = time.perf_counter()
    if enhancement is None:
        overfit = overfit_enhancement(frames, assets, cfg, smc, use_ppn, coarse_threshold, track, threads, prepared)
        enhancement = overfit.enhancement
    elif enhancement.smc != smc:
        raise ValueError("enhancement format does not match the smc flag")
    times["overfit"] = time.perf_counter() - t0

    data, param_stream, occupancy, coding_times = _assemble(prepared, assets, enhancement, use_ppn, threads)
    times.update(coding_times)
    times["total"] = time.perf_counter() - t_start
    header_bytes = len(data) - len(param_stream) - sum(len(b) for st in occupancy for sc in st for b in sc)
    report = _report(
        len(data), header_bytes, param_stream, [[s.index for s in f.scales] for f in prepared], occupancy, sum(len(f) for f in frames), times
    )
    return EncodeResult(data, report, overfit)


def _decode_frame(frame_header: FrameHeader, streams, bitdepth, params, assets: ModelAssets, use_ppn, ppn_params, f_idx) -> tuple:
    n_scales = frame_header.n_scales
    current = PointCloud(frame_header.coarse, bitdepth - n_scales)
    if len(current) != len(frame_header.coarse):
        raise CorruptStreamError(f"frame {f_idx}: duplicate coarse coordinates")
    seconds = {}
    prior_seconds = 0.0
    for s, stages in enumerate(streams):
        i = n_scales - 1 - s
        t0 = time.perf_counter()
        coords = CoordSet.from_cloud(current)
        prior_fn = _LivePrior(coords, ppn_params, assets.ppn_config) if use_ppn else (lambda j, _d: None)

        def bits_fn(j, p, stages=stages, i=i):
            try:
                return ac_decode(stages[j - 1], p)
            except CorruptStreamError as e:
                raise CorruptStreamError(f"frame {f_idx}, scale {i}, stage {j}: {e}") from None

        bits = _run_scale(coords, lsop_features(current), params, assets.dar_config, prior_fn, bits_fn)
        try:
            current = reconstruct_scale(current, np.stack(bits))
        except CorruptOctreeError as e:
            raise CorruptStreamError(f"frame {f_idx}, scale {i}: {e}") from None
        if use_ppn:
            prior_seconds += prior_fn.seconds
        seconds[i] = time.perf_counter() - t0
    return current, seconds, prior_seconds


def decode_gopc(data: bytes, assets: ModelAssets, threads: int = 1) -> DecodeResult:
    """Inverse of :func:`encode_gopc`; refuses streams made with other assets."""
    t_start = time.perf_counter()
    bs = read_bitstream(data, expected_checksum=assets.checksum)
    hdr = bs.header
    t0 = time.perf_counter()
    enhancement = Enhancement.from_stream(bs.param_stream, hdr.smc)
    times = {"model": time.perf_counter() - t0}
    params = effective_params(assets, enhancement)
    ppn_params = as_param_tensors(assets.ppn_params, dtype=np.float32)
    jobs = list(enumerate(zip(hdr.frames, bs.occupancy)))
    results = _map(
        lambda job: _decode_frame(job[1][0], job[1][1], hdr.bitdepth, params, assets, hdr.ppn, ppn_params, job[0]),
        jobs,
        threads,
    )
    frames = []
    times["prior"] = 0.0
    for cloud, seconds, prior_seconds in results:
        frames.append(cloud)
        times["prior"] += prior_seconds
        for i, sec in seconds.items():
            times[f"scale_{i}"] = times.get(f"scale_{i}", 0.0) + sec
    times["total"] = time.perf_counter() - t_start
    indices = [[fh.n_scales - 1 - s for s in range(fh.n_scales)] for fh in hdr.frames]
    report = _report(len(data), bs.header_bytes, bs.param_stream, indices, bs.occupancy, sum(len(f) for f in frames), times)
    return DecodeResult(frames, report)


# --------------------------------------------------------------------------- baseline


def frequency_baseline_bits(pc: PointCloud, coarse_threshold: int = DEFAULT_COARSE_THRESHOLD) -> float:
    """Geometry bits of a coder using one empirical probability per stage.

    The eight probabilities are charged 16 bits each as side information.
    """
    frame = prepare_frame(pc, coarse_threshold)
    if not frame.scales:
        return 0.0
    bits = np.concatenate([s.bits for s in frame.scales], axis=1)
    total = 8 * 16.0
    for j in range(8):
        p16 = quantize_probs(np.full(bits.shape[1], bits[j].mean()))
        total += ideal_bits(bits[j], p16)
    return total
