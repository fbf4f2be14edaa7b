"""Dataset preparation and classical CD-k training with weight decay."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .model import RbmModel, all_states, cond_prob_hidden, cond_prob_visible, save_model
from .samplers import gibbs_chain

log = logging.getLogger(__name__)

DEFAULT_CHECKPOINTS = (20, 90, 600, 1000, 1400, 2000)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch):
        super().__init__(f"non-finite parameters at epoch {epoch}")
        self.epoch = epoch


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binarized images followed by a one-hot label block."""

    patterns: np.ndarray
    labels: np.ndarray
    resolution: int
    n_classes: int

    def __post_init__(self):
        p = np.asarray(self.patterns, dtype=np.uint8)
        labels = np.asarray(self.labels, dtype=int)
        if p.ndim != 2 or p.shape[1] != self.resolution**2 + self.n_classes:
            raise ValueError(f"patterns must have {self.resolution ** 2 + self.n_classes} columns")
        block = p[:, self.n_pixels:]
        if np.any(block.sum(axis=1) != 1) or np.any(block.argmax(axis=1) != labels):
            raise ValueError("label block must be one-hot and agree with labels")
        object.__setattr__(self, "patterns", p)
        object.__setattr__(self, "labels", labels)

    @property
    def n_pixels(self) -> int:
        return self.resolution**2

    @property
    def images(self) -> np.ndarray:
        return self.patterns[:, : self.n_pixels]

    def __len__(self):
        return self.patterns.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.patterns[idx], self.labels[idx], self.resolution, self.n_classes)


def _area_matrix(src: int, dst: int) -> np.ndarray:
    """Row i averages the source pixels covered by output pixel i (fractional overlap)."""
    A = np.zeros((dst, src))
    for i in range(dst):
        lo, hi = i * src / dst, (i + 1) * src / dst
        for k in range(int(np.floor(lo)), int(np.ceil(hi))):
            A[i, k] = min(hi, k + 1) - max(lo, k)
    return A / A.sum(axis=1, keepdims=True)


def block_average(images, resolution: int) -> np.ndarray:
    """Downscale flattened square images by area averaging."""
    images = np.asarray(images, dtype=float)
    side = int(round(np.sqrt(images.shape[1])))
    if side * side != images.shape[1]:
        raise ValueError(f"{images.shape[1]} features do not form a square image")
    if resolution > side:
        raise ValueError(f"cannot upscale {side}x{side} images to {resolution}x{resolution}")
    A = _area_matrix(side, resolution)
    grid = images.reshape(-1, side, side)
    return np.einsum("ik,nkl,jl->nij", A, grid, A).reshape(-1, resolution * resolution)


def binarize(images, resolution: int, threshold: float | None = None, gray_max: float | None = None):
    """Block-average to ``resolution`` and set pixels strictly above ``threshold``.

    The default threshold is half of ``gray_max`` (the observed maximum).
    """
    images = np.asarray(images, dtype=float)
    if threshold is None:
        threshold = 0.5 * (images.max() if gray_max is None else gray_max)
    return (block_average(images, resolution) > threshold).astype(np.uint8)


def read_digits_csv(path):
    """Rows of integer gray levels followed by the class label."""
    feats, labels = [], []
    with Path(path).open() as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row:
                continue
            try:
                vals = [float(x) for x in row]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from exc
            if feats and len(vals) - 1 != len(feats[0]):
                raise ValueError(f"{path}:{lineno}: expected {len(feats[0]) + 1} columns, got {len(vals)}")
            if vals[-1] != int(vals[-1]):
                raise ValueError(f"{path}:{lineno}: label must be an integer")
            feats.append(vals[:-1])
            labels.append(int(vals[-1]))
    if not feats:
        raise ValueError(f"{path}: no rows")
    return np.array(feats), np.array(labels)


def load_optdigits(path, resolution: int = 8, threshold: float | None = None, n_classes: int = 10) -> Dataset:
    """Load an OptDigits-style CSV (features, then label) into binary TPs."""
    feats, labels = read_digits_csv(path)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    pixels = binarize(feats, resolution, threshold)
    onehot = np.eye(n_classes, dtype=np.uint8)[labels]
    return Dataset(np.concatenate([pixels, onehot], axis=1), labels, resolution, n_classes)


def write_sklearn_digits_csv(path) -> Path:
    """Dump scikit-learn's bundled 8x8 digits (gray 0..16) in the CSV layout."""
    from sklearn.datasets import load_digits

    d = load_digits()
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for x, y in zip(d.data.astype(int), d.target):
            w.writerow(list(x) + [int(y)])
    return path


def train_test_split(ds: Dataset, n_train: int, n_test: int, seed: int):
    """First ``n_train`` patterns for training, ``n_test`` random others for testing."""
    if n_train + n_test > len(ds):
        raise ValueError(f"dataset has {len(ds)} patterns, need {n_train + n_test}")
    rest = np.arange(n_train, len(ds))
    test_idx = np.sort(np.random.default_rng(seed).choice(rest, n_test, replace=False))
    return ds.subset(np.arange(n_train)), ds.subset(test_idx)


# ---------------------------------------------------------------------------
# gradients


@dataclass(frozen=True)
class Gradient:
    dW: np.ndarray
    db: np.ndarray
    dc: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dW.ravel(), self.db, self.dc])

    def __add__(self, other):
        return Gradient(self.dW + other.dW, self.db + other.db, self.dc + other.dc)

    def __mul__(self, s):
        return Gradient(self.dW * s, self.db * s, self.dc * s)

    __rmul__ = __mul__


def _stats(model, v):
    ph = cond_prob_hidden(model, v)
    v = np.asarray(v, dtype=float)
    return ph[:, :, None] * v[:, None, :], v, ph


def cd_k_gradient(model: RbmModel, batch, kG: int, rng=None) -> Gradient:
    """Contrastive-divergence estimate of the batch-mean log-likelihood gradient.

    The data term uses p(H=1|v_tr) v_tr; the model term uses p(H=1|v_k) v_k
    where v_k ends a ``kG``-step Gibbs chain started at v_tr.
    """
    batch = np.asarray(batch, dtype=np.uint8)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError("empty batch")
    if kG < 1:
        raise ValueError("kG must be >= 1")
    pos_w, pos_v, pos_h = _stats(model, batch)
    vk, _ = gibbs_chain(model, batch, kG, 1.0, rng)
    neg_w, neg_v, neg_h = _stats(model, vk)
    return Gradient((pos_w - neg_w).mean(0), (pos_v - neg_v).mean(0), (pos_h - neg_h).mean(0))


def log_marginal_table(model: RbmModel):
    """(all visible vectors, log p(v) for each) by explicit hidden-layer sums."""
    vs = all_states(model.n_v).astype(float)
    hs = all_states(model.n_h).astype(float)
    logw = logsumexp((vs @ model.W.T) @ hs.T + (hs @ model.c)[None, :], axis=1) + vs @ model.b
    return vs, logw - logsumexp(logw)


def exact_log_likelihood(model: RbmModel, batch, cap: int = 20) -> float:
    """Mean of ln p(v_tr) over the batch (T = 1)."""
    if model.n_units > cap:
        raise ValueError(f"{model.n_units} units exceeds enumeration cap {cap}")
    batch = np.asarray(batch, dtype=np.int64)
    _, logp = log_marginal_table(model)
    idx = batch @ (1 << np.arange(model.n_v, dtype=np.int64))
    return float(logp[idx].mean())


def exact_loglik_gradient(model: RbmModel, batch, cap: int = 20) -> Gradient:
    """Exact batch-mean gradient; model expectations sum over every visible vector."""
    if model.n_units > cap:
        raise ValueError(f"{model.n_units} units exceeds enumeration cap {cap}")
    batch = np.asarray(batch, dtype=np.uint8)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError("empty batch")
    pos_w, pos_v, pos_h = _stats(model, batch)
    vs, logp = log_marginal_table(model)
    p = np.exp(logp)
    all_w, _, all_h = _stats(model, vs)
    neg_w = np.einsum("k,kij->ij", p, all_w)
    return Gradient(pos_w.mean(0) - neg_w, pos_v.mean(0) - p @ vs, pos_h.mean(0) - p @ all_h)


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainingConfig:
    kG: int = 5
    learning_rate: float = 0.05
    epochs: int = 2000
    batch_size: int = 10
    weight_decay: float = 1e-3
    weight_cap: float | None = None
    rng_seed: int = 0
    checkpoints: tuple = DEFAULT_CHECKPOINTS

    def __post_init__(self):
        if self.kG < 1:
            raise ValueError("kG must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        object.__setattr__(self, "checkpoints", tuple(int(e) for e in self.checkpoints))

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    recon_error: float
    max_abs_w: float
    classif_error: float | None = None
    checkpoint: str | None = None


@dataclass
class TrainingTrace:
    records: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "recon_error", "max_abs_w", "classif_error"])
            for r in self.records:
                ce = "" if r.classif_error is None else repr(r.classif_error)
                w.writerow([r.epoch, repr(r.recon_error), repr(r.max_abs_w), ce])


def reconstruction_error(model: RbmModel, v) -> float:
    """Mean squared difference between v and its mean-field one-step reconstruction."""
    v = np.asarray(v, dtype=float)
    recon = cond_prob_visible(model, cond_prob_hidden(model, v))
    return float(np.mean((v - recon) ** 2))


def apply_update(model: RbmModel, grad: Gradient, lr: float, weight_decay: float = 0.0,
                 weight_cap: float | None = None) -> RbmModel:
    """One ascent step; L2 decay acts on the weights only, then optional clipping."""
    W = model.W + lr * grad.dW - lr * weight_decay * model.W
    if weight_cap is not None:
        W = np.clip(W, -weight_cap, weight_cap)
    b = model.b + lr * grad.db
    c = model.c + lr * grad.dc
    for arr in (W, b, c):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite parameters")
    return RbmModel(W, b, c)


def train(model: RbmModel, dataset, config: TrainingConfig, rng=None, checkpoint_dir=None,
          evaluate=None):
    """CD-k training with per-epoch shuffled mini-batches.

    ``dataset`` is a :class:`Dataset` or an array of patterns. ``evaluate``
    (optional) maps a model to a held-out classification error, recorded on
    checkpoint epochs. Returns ``(model, trace)``; ``trace.checkpoints`` maps
    epoch to the model at the end of that epoch.
    """
    patterns = dataset.patterns if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.uint8)
    rng = np.random.default_rng(config.rng_seed if rng is None else rng)
    trace = TrainingTrace()
    ckpt = set(config.checkpoints)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    n = patterns.shape[0]
    if 0 in ckpt:
        # the untrained model; no epoch record since no epoch has run
        trace.checkpoints[0] = model
        if checkpoint_dir is not None:
            save_model(model, checkpoint_dir / "epoch_00000.json", epoch=0, training=config.to_dict())
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = patterns[order[start : start + config.batch_size]]
            grad = cd_k_gradient(model, batch, config.kG, rng)
            try:
                model = apply_update(model, grad, config.learning_rate, config.weight_decay, config.weight_cap)
            except FloatingPointError:
                raise TrainingDiverged(epoch) from None
        rec = EpochRecord(epoch, reconstruction_error(model, patterns), float(np.abs(model.W).max()))
        if epoch in ckpt:
            trace.checkpoints[epoch] = model
            if evaluate is not None:
                rec.classif_error = float(evaluate(model))
            if checkpoint_dir is not None:
                path = checkpoint_dir / f"epoch_{epoch:05d}.json"
                save_model(model, path, epoch=epoch, training=config.to_dict())
                rec.checkpoint = str(path)
        trace.records.append(rec)
        log.debug("epoch %d recon %.4f max|w| %.3f", epoch, rec.recon_error, rec.max_abs_w)
    return model, trace


def load_checkpoint(path):
    """Model and epoch stored by :func:`train`."""
    d = json.loads(Path(path).read_text())
    return RbmModel.from_dict(d), d.get("epoch")
