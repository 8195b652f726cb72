"""Two-phase training: autoencoder pretraining, then joint clustering.

Fine-tuning minimizes the clustering KL plus, for the regularized method,
a weighted virtual-adversarial consistency term. The sharpened target
distribution is refreshed from a full-dataset pass every ``tau``
iterations; training stops when the fraction of points whose hard
assignment changed between consecutive refreshes drops below ``sigma``,
or at the iteration cap.

Batch losses are means over batch rows. All randomness flows from the
config seed through purpose-tagged generator streams, so a run is a pure
function of (config, data); with the regularization weight at zero the
regularized method consumes exactly the same streams as the plain one and
their traces are bit-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import metrics
from .dec import SoftAssignment, clustering_grads, kl_divergence, soft_assign, target_distribution
from .kmeans import kmeans
from .network import Adam, Network, SgdMomentum, backward, encode, forward
from .tensor import Matrix, check_finite, mse_loss
from .vat import VatConfig, adversarial_perturbation, vat_loss

METHODS = ("kmeans", "ae_kmeans", "dec", "rdec")

# Generator stream tags; every consumer derives from (seed, tag, ...).
_STREAM_PRETRAIN = 1
_STREAM_SHUFFLE = 2
_STREAM_VAT = 3
_STREAM_KMEANS = 4

ProgressFn = Callable[[dict], None]


@dataclass
class OptimizerSpec:
    kind: str = "sgd_momentum"  # or "adam"
    lr: float = 0.01
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999

    def make(self):
        if self.kind == "sgd_momentum":
            return SgdMomentum(lr=self.lr, momentum=self.momentum)
        if self.kind == "adam":
            return Adam(lr=self.lr, beta1=self.beta1, beta2=self.beta2)
        raise ValueError(f"unknown optimizer kind {self.kind!r}")


@dataclass
class TrainConfig:
    method: str = "rdec"
    gamma: float = 5.0
    s: float = 2.0
    alpha: float = 1.0
    vat: VatConfig = field(default_factory=VatConfig)
    tau: int = 140
    sigma: float = 0.01
    max_iter: int = 20_000
    batch_size: int = 256
    pretrain_epochs: int = 300
    pretrain_optimizer: OptimizerSpec = field(
        default_factory=lambda: OptimizerSpec(kind="sgd_momentum", lr=1.0, momentum=0.9)
    )
    finetune_optimizer: OptimizerSpec = field(
        default_factory=lambda: OptimizerSpec(kind="sgd_momentum", lr=0.01, momentum=0.9)
    )
    kmeans_restarts: int = 20
    # Optional extra stop: quit when the best batch clustering loss has not
    # improved for this many consecutive iterations. 0 disables.
    patience: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.s < 1.0:
            raise ValueError(f"s must be >= 1, got {self.s}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError(f"sigma must be in (0, 1), got {self.sigma}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.pretrain_epochs < 0:
            raise ValueError(f"pretrain_epochs must be >= 0, got {self.pretrain_epochs}")
        if self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        self.vat.__post_init__()


@dataclass
class IterationRecord:
    iteration: int
    clustering_loss: float
    vat_loss: float
    total_loss: float


@dataclass
class CheckpointRecord:
    iteration: int
    loss: float | None  # full-dataset clustering KL per row; None for baselines
    acc: float | None
    ari: float | None
    label_change_rate: float | None  # None at the first checkpoint


@dataclass
class RunReport:
    method: str
    iterations: list[IterationRecord]
    checkpoints: list[CheckpointRecord]
    final_assignments: np.ndarray
    final_centroids: np.ndarray
    stop_reason: str  # "converged" or "max_iterations"
    wall_clock_seconds: float

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "iterations": [vars(r) for r in self.iterations],
            "checkpoints": [vars(c) for c in self.checkpoints],
            "final_assignments": self.final_assignments.tolist(),
            "final_centroids": self.final_centroids.tolist(),
            "stop_reason": self.stop_reason,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


class ClusterModel:
    """Encoder plus centroids, viewed as a map from inputs to soft assignments."""

    def __init__(self, encoder: Network, centroids: np.ndarray, alpha: float = 1.0):
        self.encoder = encoder
        self.centroids = centroids
        self.alpha = alpha

    def parameters(self) -> list[np.ndarray]:
        return [*self.encoder.parameters(), self.centroids]

    def predict(self, x: Matrix) -> Matrix:
        z = encode(self.encoder, x)
        return soft_assign(z, self.centroids, self.alpha).q

    def _kl_forward_backward(self, x: Matrix, q_ref: Matrix, need_input: bool,
                             need_params: bool):
        n = x.shape[0]
        z, caches = forward(self.encoder, x)
        q = soft_assign(z, self.centroids, self.alpha).q
        loss = kl_divergence(q_ref, q) / n
        grad_z, grad_centroids = clustering_grads(z, self.centroids, q_ref, self.alpha)
        param_grads, grad_x = backward(
            self.encoder, caches, grad_z / n,
            need_input_grad=need_input, need_param_grads=need_params,
        )
        return loss, grad_x, param_grads, grad_centroids / n

    def kl_input_grad(self, x: Matrix, q_ref: Matrix) -> Matrix:
        """d/dx of mean-row KL(q_ref || predict(x)), q_ref constant."""
        _, grad_x, _, _ = self._kl_forward_backward(x, q_ref, True, False)
        return grad_x

    def kl_param_grads(self, x: Matrix, q_ref: Matrix):
        """Mean-row KL(q_ref || predict(x)) and gradients per parameter."""
        loss, _, param_grads, grad_centroids = self._kl_forward_backward(
            x, q_ref, False, True
        )
        return loss, [*param_grads, grad_centroids]


def label_change_rate(prev_assignments, new_assignments) -> float:
    """Fraction of indices whose hard assignment changed."""
    prev = np.asarray(prev_assignments)
    new = np.asarray(new_assignments)
    if prev.shape != new.shape:
        raise ValueError(f"length mismatch: {prev.shape} vs {new.shape}")
    return float(np.mean(prev != new))


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """One epoch of index batches from a fresh seeded permutation."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _endless_batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        yield from _epoch_batches(n, batch_size, rng)


def _reconstruction_loss(encoder: Network, decoder: Network, data: Matrix,
                         chunk: int = 8192) -> float:
    total = 0.0
    for start in range(0, data.shape[0], chunk):
        x = data[start : start + chunk]
        recon = encode(decoder, encode(encoder, x))
        total += float(np.sum((recon - x) ** 2))
    return total / data.size


def pretrain(
    encoder: Network,
    decoder: Network,
    data: Matrix,
    cfg: TrainConfig,
    progress: ProgressFn | None = None,
) -> float:
    """Train encoder+decoder in place to reconstruct the data; returns final loss.

    Mini-batch reconstruction training for ``pretrain_epochs`` epochs with
    the phase-1 optimizer. Per-epoch mean batch losses are emitted through
    the progress callback.
    """
    if data.shape[0] == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, _STREAM_PRETRAIN])
    params = [*encoder.parameters(), *decoder.parameters()]
    optimizer = cfg.pretrain_optimizer.make()
    n = data.shape[0]
    for epoch in range(cfg.pretrain_epochs):
        losses = []
        for idx in _epoch_batches(n, cfg.batch_size, rng):
            x = data[idx]
            z, enc_caches = forward(encoder, x)
            recon, dec_caches = forward(decoder, z)
            loss, grad = mse_loss(recon, x)
            losses.append(loss)
            dec_grads, grad_z = backward(decoder, dec_caches, grad, need_input_grad=True)
            enc_grads, _ = backward(encoder, enc_caches, grad_z)
            optimizer.step(params, [*enc_grads, *dec_grads])
        epoch_loss = float(np.mean(losses))
        check_finite("reconstruction loss", np.array([epoch_loss]))
        if progress is not None:
            progress({"phase": "pretrain", "epoch": epoch, "loss": epoch_loss})
    return _reconstruction_loss(encoder, decoder, data)


def finetune(
    encoder: Network,
    data: Matrix,
    k: int,
    cfg: TrainConfig,
    labels=None,
    progress: ProgressFn | None = None,
) -> tuple[np.ndarray, RunReport]:
    """Jointly optimize encoder weights and centroids; returns hard assignments.

    Centroids start from the best of several K-means runs on the embedded
    data and are updated by the same optimizer as the network weights.
    When ``labels`` is given, ACC and ARI are recorded at every target
    refresh. The encoder is mutated in place.
    """
    cfg.validate()
    if k < 2:
        raise ValueError(f"need k >= 2 clusters, got {k}")
    n = data.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds {n} data points")
    t0 = time.perf_counter()

    z = encode(encoder, data)
    km_seed = int(np.random.SeedSequence([cfg.seed, _STREAM_KMEANS]).generate_state(1)[0])
    km = kmeans(z, k, restarts=cfg.kmeans_restarts, seed=km_seed)
    centroids = km.centroids.copy()
    model = ClusterModel(encoder, centroids, cfg.alpha)
    params = model.parameters()
    optimizer = cfg.finetune_optimizer.make()
    use_vat = cfg.method == "rdec" and cfg.gamma > 0.0

    batch_iter = _endless_batches(n, cfg.batch_size,
                                  np.random.default_rng([cfg.seed, _STREAM_SHUFFLE]))

    iterations: list[IterationRecord] = []
    checkpoints: list[CheckpointRecord] = []
    target_full = None
    prev_assign: np.ndarray | None = None
    assignments: np.ndarray | None = None
    stop_reason = "max_iterations"
    assignments_fresh = False
    best_batch_loss = np.inf
    stale = 0

    for it in range(cfg.max_iter):
        if it % cfg.tau == 0:
            q_full = model.predict(data)
            assignments = q_full.argmax(axis=1)
            target_full = target_distribution(SoftAssignment(q_full, cfg.alpha), cfg.s)
            ckpt_loss = kl_divergence(target_full.p, q_full) / n
            acc = ari = None
            if labels is not None:
                acc, _ = metrics.accuracy(labels, assignments)
                ari = metrics.adjusted_rand_index(labels, assignments)
            rate = None if prev_assign is None else label_change_rate(prev_assign, assignments)
            checkpoints.append(CheckpointRecord(it, ckpt_loss, acc, ari, rate))
            if progress is not None:
                progress({
                    "phase": "finetune", "iteration": it, "loss": ckpt_loss,
                    "acc": acc, "ari": ari, "label_change_rate": rate,
                })
            if rate is not None and rate < cfg.sigma:
                stop_reason = "converged"
                assignments_fresh = True
                break
            prev_assign = assignments

        idx = next(batch_iter)
        x_b = data[idx]
        b = len(idx)
        z_b, caches = forward(encoder, x_b)
        q_b = soft_assign(z_b, centroids, cfg.alpha).q
        p_b = target_full.p[idx]
        clustering = kl_divergence(p_b, q_b) / b
        grad_z, grad_centroids = clustering_grads(z_b, centroids, p_b, cfg.alpha)
        enc_grads, _ = backward(encoder, caches, grad_z / b)
        grads = [*enc_grads, grad_centroids / b]

        consistency = 0.0
        if use_vat:
            vat_rng = np.random.default_rng([cfg.seed, _STREAM_VAT, it])
            r_adv = adversarial_perturbation(model, x_b, q_b, cfg.vat, vat_rng)
            consistency, vat_grads = vat_loss(model, x_b, r_adv, q_ref=q_b)
            for g, vg in zip(grads, vat_grads):
                g += cfg.gamma * vg

        optimizer.step(params, grads)
        iterations.append(
            IterationRecord(it, clustering, consistency,
                            clustering + cfg.gamma * consistency)
        )

        if cfg.patience > 0:
            if clustering < best_batch_loss:
                best_batch_loss = clustering
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    stop_reason = "converged"
                    break

    if not assignments_fresh:
        assignments = model.predict(data).argmax(axis=1)

    report = RunReport(
        method=cfg.method,
        iterations=iterations,
        checkpoints=checkpoints,
        final_assignments=assignments,
        final_centroids=centroids.copy(),
        stop_reason=stop_reason,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return assignments, report


def run_clustering(
    method: str,
    data: Matrix,
    k: int,
    cfg: TrainConfig,
    encoder: Network | None = None,
    labels=None,
    progress: ProgressFn | None = None,
) -> tuple[np.ndarray, RunReport]:
    """Uniform entry point for all methods, baselines included."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    if method in ("dec", "rdec"):
        if encoder is None:
            raise ValueError(f"method {method} needs a pretrained encoder")
        return finetune(encoder, data, k, replace(cfg, method=method),
                        labels=labels, progress=progress)

    t0 = time.perf_counter()
    if method == "ae_kmeans":
        if encoder is None:
            raise ValueError("method ae_kmeans needs a pretrained encoder")
        points = encode(encoder, data)
    else:
        points = data
    km_seed = int(np.random.SeedSequence([cfg.seed, _STREAM_KMEANS]).generate_state(1)[0])
    km = kmeans(points, k, restarts=cfg.kmeans_restarts, seed=km_seed)
    acc = ari = None
    if labels is not None:
        acc, _ = metrics.accuracy(labels, km.assignments)
        ari = metrics.adjusted_rand_index(labels, km.assignments)
    report = RunReport(
        method=method,
        iterations=[],
        checkpoints=[CheckpointRecord(0, None, acc, ari, None)],
        final_assignments=km.assignments,
        final_centroids=km.centroids,
        stop_reason="converged",
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return km.assignments, report
