"""One-shot training: dataset assembly from a single labeled cloud, BCE loss,
Adam updates, class-balanced batching, validation, and early stopping.

Training is deterministic for a fixed seed in sequential mode. With
threads > 1 each mini-batch is sharded across a thread pool and gradients
are reduced in fixed shard order, so results match the sequential run up to
floating-point summation order.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import net
from .cloud import (
    PointCloud,
    augment_rotations,
    build_index,
    extract_patches,
)
from .errors import InsufficientNeighborhood, InvalidInput, ModelShapeError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PROB_CLAMP = 1e-7
BALANCE_MODES = ("none", "balanced-batches")


@dataclass
class TrainConfig:
    """Hyperparameters of the one-shot training protocol."""

    k: int = 16
    lr: float = 1e-5
    batch_size: int = 256
    max_epochs: int = 200
    seed: int = 0
    balance: str = "balanced-batches"
    val_fraction: float = 0.1
    patience: int = 20
    augment: bool = True

    def __post_init__(self):
        if self.k % 2 != 0 or not (8 <= self.k <= 64):
            raise InvalidInput(f"k must be even and in [8, 64], got {self.k}")
        if not (0.0 < self.val_fraction < 0.5):
            raise InvalidInput(f"val_fraction must be in (0, 0.5), got {self.val_fraction}")
        if self.lr <= 0:
            raise InvalidInput(f"lr must be positive, got {self.lr}")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise InvalidInput(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.max_epochs < 1 or self.patience < 1:
            raise InvalidInput("max_epochs and patience must be >= 1")
        if self.balance not in BALANCE_MODES:
            raise InvalidInput(f"balance must be one of {BALANCE_MODES}, got {self.balance!r}")


@dataclass
class PatchSet:
    """Patch features for a set of samples, plus labels and provenance."""

    dvecs: np.ndarray     # (n, k, 3)
    offsets: np.ndarray   # (n, k)
    scales: np.ndarray    # (n,)
    labels: np.ndarray    # (n,)
    origin: np.ndarray    # (n,) original point index each patch derives from

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def take(self, idx: np.ndarray) -> "PatchSet":
        return PatchSet(self.dvecs[idx], self.offsets[idx], self.scales[idx],
                        self.labels[idx], self.origin[idx])


@dataclass
class TrainState:
    """Adam state plus early-stopping bookkeeping."""

    params: net.ModelParameters
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    best_fscore: float = -1.0
    since_improve: int = 0
    best_params: net.ModelParameters | None = None

    @classmethod
    def fresh(cls, params: net.ModelParameters) -> "TrainState":
        return cls(
            params=params,
            m={n: np.zeros_like(t) for n, t in params.tensors.items()},
            v={n: np.zeros_like(t) for n, t in params.tensors.items()},
        )


def bce_loss(e, e_gt):
    """Binary cross entropy and its gradient with respect to e.

    Probabilities are clamped to [1e-7, 1 - 1e-7]; the gradient is zero
    where the clamp is active. Accepts scalars or arrays.
    """
    e = np.asarray(e, dtype=np.float64)
    y = np.asarray(e_gt, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise InvalidInput("ground-truth labels must be 0 or 1")
    ec = np.clip(e, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(y * np.log(ec) + (1.0 - y) * np.log(1.0 - ec))
    inside = (e > PROB_CLAMP) & (e < 1.0 - PROB_CLAMP)
    grad = np.where(inside, (ec - y) / (ec * (1.0 - ec)), 0.0)
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def build_dataset(cloud: PointCloud, cfg: TrainConfig):
    """Patch sets for training and validation from one labeled cloud.

    One patch per point per rotation copy. The split is drawn at the
    original-point level so all rotated copies of a point land on the same
    side, preventing leakage.
    """
    if cloud.labels is None:
        raise InvalidInput("training cloud must be fully labeled")
    if cloud.n < 2 * cfg.k + 1:
        raise InsufficientNeighborhood(
            f"training needs at least {2 * cfg.k + 1} points, cloud has {cloud.n}"
        )
    copies = augment_rotations(cloud) if cfg.augment else [cloud]
    targets = np.arange(cloud.n)
    parts = []
    for copy in copies:
        index = build_index(copy)
        dv, off, _, sc, _ = extract_patches(copy, index, targets, cfg.k)
        parts.append((dv, off, sc))
    full = PatchSet(
        dvecs=np.concatenate([p[0] for p in parts]),
        offsets=np.concatenate([p[1] for p in parts]),
        scales=np.concatenate([p[2] for p in parts]),
        labels=np.tile(cloud.labels, len(copies)),
        origin=np.tile(targets, len(copies)),
    )
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(cloud.n)
    n_val = max(1, int(np.floor(cfg.val_fraction * cloud.n + 0.5)))
    val_points = np.zeros(cloud.n, dtype=bool)
    val_points[perm[:n_val]] = True
    val_mask = val_points[full.origin]
    return full.take(np.nonzero(~val_mask)[0]), full.take(np.nonzero(val_mask)[0])


def adam_step(state: TrainState, grads: dict[str, np.ndarray], cfg: TrainConfig) -> TrainState:
    """One in-place Adam update with bias correction."""
    if set(grads) != set(state.params.tensors):
        raise ModelShapeError("gradient names do not match parameter registry")
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, theta in state.params.tensors.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ModelShapeError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        theta -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return state


def _classification_prf(pred_edge: np.ndarray, true_edge: np.ndarray):
    tp = int(np.sum(pred_edge & true_edge))
    fp = int(np.sum(pred_edge & ~true_edge))
    fn = int(np.sum(~pred_edge & true_edge))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    fscore = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, fscore


def _forward_probs(patches: PatchSet, params: net.ModelParameters, batch: int) -> np.ndarray:
    probs = np.empty(patches.n)
    for lo in range(0, patches.n, batch):
        hi = min(lo + batch, patches.n)
        probs[lo:hi], _ = net.forward_batch(
            patches.dvecs[lo:hi], patches.offsets[lo:hi], patches.scales[lo:hi], params
        )
    return probs


def _batch_plan(train: PatchSet, cfg: TrainConfig, rng: np.random.Generator):
    """Index arrays of the epoch's mini-batches, per the balancing mode."""
    n = train.n
    bz = cfg.batch_size
    if cfg.balance == "none":
        perm = rng.permutation(n)
        return [perm[lo:lo + bz] for lo in range(0, n, bz)]
    half = bz // 2
    n_batches = max(1, -(-n // bz))
    edge_pool = np.nonzero(train.labels == 1)[0]
    flat_pool = np.nonzero(train.labels == 0)[0]
    minority_is_edge = edge_pool.size <= flat_pool.size
    minority, majority = (edge_pool, flat_pool) if minority_is_edge else (flat_pool, edge_pool)
    need = n_batches * half
    stream = []
    while sum(len(s) for s in stream) < need:
        stream.append(majority[rng.permutation(majority.size)])
    major_stream = np.concatenate(stream)[:need]
    minor_stream = minority[rng.integers(0, minority.size, size=need)]
    batches = []
    for b in range(n_batches):
        sl = slice(b * half, (b + 1) * half)
        edge_half = minor_stream[sl] if minority_is_edge else major_stream[sl]
        flat_half = major_stream[sl] if minority_is_edge else minor_stream[sl]
        batches.append(np.concatenate([edge_half, flat_half]))
    return batches


def _batch_step(train: PatchSet, idx: np.ndarray, state: TrainState, cfg: TrainConfig,
                pool: ThreadPoolExecutor | None, threads: int) -> float:
    """Forward/backward on one mini-batch, then an Adam update; returns loss."""
    total = idx.size

    def shard_pass(rows):
        e, cache = net.forward_batch(
            train.dvecs[rows], train.offsets[rows], train.scales[rows],
            state.params, need_cache=True,
        )
        losses, de = bce_loss(e, train.labels[rows].astype(np.float64))
        grads = net.backward(state.params, cache, de / total)
        return float(np.sum(losses)), grads

    if pool is None:
        loss_sum, grads = shard_pass(idx)
    else:
        shards = [s for s in np.array_split(idx, threads) if s.size]
        results = list(pool.map(shard_pass, shards))
        loss_sum = sum(r[0] for r in results)
        grads = results[0][1]
        for _, g in results[1:]:
            for name in grads:
                grads[name] += g[name]
    adam_step(state, grads, cfg)
    return loss_sum / total


def train(cloud: PointCloud, cfg: TrainConfig, threads: int = 1):
    """Train on one labeled cloud; returns (best parameters, epoch log).

    The log holds one dict per epoch with keys epoch, mean_loss,
    val_precision, val_recall, val_fscore, seconds.
    """
    train_set, val_set = build_dataset(cloud, cfg)
    classes = np.unique(train_set.labels)
    if classes.size < 2:
        raise InvalidInput("training labels contain a single class; cannot balance or learn")
    params = net.init_params(cfg.k, seed=cfg.seed)
    state = TrainState.fresh(params)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    log: list[dict] = []
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            started = time.perf_counter()
            batches = _batch_plan(train_set, cfg, rng)
            losses = [_batch_step(train_set, idx, state, cfg, pool, threads) for idx in batches]
            probs = _forward_probs(val_set, state.params, cfg.batch_size)
            p, r, f = _classification_prf(probs > 0.5, val_set.labels == 1)
            log.append({
                "epoch": epoch,
                "mean_loss": float(np.mean(losses)),
                "val_precision": p,
                "val_recall": r,
                "val_fscore": f,
                "seconds": time.perf_counter() - started,
            })
            if f > state.best_fscore:
                state.best_fscore = f
                state.best_params = state.params.copy()
                state.since_improve = 0
            else:
                state.since_improve += 1
                if state.since_improve >= cfg.patience:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return state.best_params if state.best_params is not None else state.params, log


INFER_WINDOW = 256


def predict(cloud: PointCloud, params: net.ModelParameters, batch: int = 256,
            threads: int = 1):
    """Classify every point of a cloud; returns (cloud with predictions, stats).

    Patches are extracted in streamed chunks of at most `batch` rows, so
    memory stays bounded by O(batch * k) plus a small fixed window. The
    model itself always runs on fixed global windows, which keeps the
    output bit-identical for every batch size and thread count. The stats
    dict reports model-inference seconds and points per second.
    """
    if batch < 1:
        raise InvalidInput("batch must be >= 1")
    if cloud.n < 2 * params.k + 1:
        raise InsufficientNeighborhood(
            f"prediction needs at least {2 * params.k + 1} points, cloud has {cloud.n}"
        )
    index = build_index(cloud)
    probs = np.empty(cloud.n)
    step = min(batch, INFER_WINDOW)

    def run_window(lo: int) -> float:
        hi = min(lo + INFER_WINDOW, cloud.n)
        dv = np.empty((hi - lo, params.k, 3))
        off = np.empty((hi - lo, params.k))
        sc = np.empty(hi - lo)
        for sub in range(lo, hi, step):
            sub_hi = min(sub + step, hi)
            targets = np.arange(sub, sub_hi)
            dv[sub - lo:sub_hi - lo], off[sub - lo:sub_hi - lo], _, \
                sc[sub - lo:sub_hi - lo], _ = extract_patches(cloud, index, targets, params.k)
        t0 = time.perf_counter()
        probs[lo:hi], _ = net.forward_batch(dv, off, sc, params)
        return time.perf_counter() - t0

    windows = list(range(0, cloud.n, INFER_WINDOW))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            infer_seconds = sum(pool.map(run_window, windows))
    else:
        infer_seconds = sum(run_window(lo) for lo in windows)
    labels = (probs > 0.5).astype(np.int64)
    stats = {
        "infer_seconds": infer_seconds,
        "pps": cloud.n / infer_seconds if infer_seconds > 0 else float("inf"),
    }
    return cloud.with_predictions(probs, labels), stats


def write_log(log: list[dict], path) -> None:
    """Training log as CSV: one row per epoch."""
    cols = ("epoch", "mean_loss", "val_precision", "val_recall", "val_fscore", "seconds")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in log:
            fh.write(",".join(f"{row[c]:.6f}" if c != "epoch" else str(row[c]) for c in cols) + "\n")


def parse_config(path) -> TrainConfig:
    """Read a plain "key = value" config file into a TrainConfig."""
    kwargs: dict = {}
    casts = {
        "k": int, "lr": float, "batch_size": int, "max_epochs": int, "seed": int,
        "balance": str, "val_fraction": float, "patience": int,
        "augment": lambda v: v.lower() in ("1", "true", "yes"),
    }
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInput(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in casts:
                raise InvalidInput(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                kwargs[key] = casts[key](value)
            except ValueError as exc:
                raise InvalidInput(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return TrainConfig(**kwargs)
