"""Sparse autoencoder: mirrored encoder/decoder MLP, KL sparsity penalty on
the hidden activations, reconstruction loss, and a single-model training loop.

Each hidden layer is dense -> batch norm -> leaky ReLU; the latent projection
and the reconstruction output are plain affine layers. The sparsity penalty
sees the post-activation values of all 2L hidden layers (latent excluded),
squashed through a sigmoid and averaged over the batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import (
    Adam,
    BatchNorm,
    Dense,
    LeakyRelu,
    Param,
    make_optimizer,
    sigmoid,
    zero_grads,
)


@dataclass(frozen=True)
class SaeArchitecture:
    """Layer widths of one autoencoder; the decoder mirrors the encoder."""

    input_dim: int
    latent_dim: int
    encoder_hidden: tuple[int, ...] = (256, 128, 64, 32)

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(self.encoder_hidden))
        if self.latent_dim >= self.input_dim:
            raise ValueError(
                f"latent_dim must be smaller than input_dim, got {self.latent_dim} >= {self.input_dim}"
            )
        if self.latent_dim < 1 or self.input_dim < 1:
            raise ValueError("dimensions must be positive")
        if not self.encoder_hidden or any(h < 1 for h in self.encoder_hidden):
            raise ValueError("encoder_hidden must be a non-empty tuple of positive widths")

    @property
    def decoder_hidden(self) -> tuple[int, ...]:
        return tuple(reversed(self.encoder_hidden))

    @property
    def num_hidden_layers(self) -> int:
        """2L: hidden layers on both sides, latent layer not counted."""
        return 2 * len(self.encoder_hidden)


@dataclass(frozen=True)
class SparsityConfig:
    """Target average activation rho, penalty weight beta, and the clamp
    applied to measured averages before they reach a log."""

    rho: float = 0.2
    beta: float = 0.01
    clamp_eps: float = 1e-7

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ValueError(f"clamp_eps must be a small positive value, got {self.clamp_eps}")


def average_activation(activations: np.ndarray, clamp_eps: float = 1e-7) -> np.ndarray:
    """Batch-mean of sigmoid(activation) per hidden unit, clamped away from
    {0, 1} so the KL logs stay finite.

    ``activations`` is the (batch, units) post-activation matrix of one
    hidden layer.
    """
    rho_hat = sigmoid(np.asarray(activations, dtype=np.float64)).mean(axis=0)
    return np.clip(rho_hat, clamp_eps, 1.0 - clamp_eps)


def kl_divergence(rho: float, rho_hat: np.ndarray) -> float:
    """KL between Bernoulli(rho) and Bernoulli(rho_hat_j), summed over units."""
    rho_hat = np.asarray(rho_hat, dtype=np.float64)
    terms = rho * np.log(rho / rho_hat) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat))
    return float(terms.sum())


def kl_penalty(rho: float, rho_hats: Sequence[np.ndarray]) -> float:
    """Total sparsity penalty: KL summed over every hidden layer's units."""
    return float(sum(kl_divergence(rho, rh) for rh in rho_hats))


def mse_loss(x: np.ndarray, x_bar: np.ndarray) -> float:
    """(1 / 2N) * sum_i ||x_i - x_bar_i||^2 (sum over features, mean over batch)."""
    if x.shape != x_bar.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_bar.shape}")
    n = x.shape[0]
    diff = x - x_bar
    return float((diff * diff).sum() / (2.0 * n))


@dataclass
class SaeLosses:
    total: float
    mse: float
    pen: float


class _HiddenBlock:
    """dense -> batch norm -> leaky ReLU, with the activation output cached
    for the sparsity penalty."""

    def __init__(self, in_dim, out_dim, rng, dtype, name):
        # no dense bias: the batch norm's mean subtraction would cancel it
        self.dense = Dense(in_dim, out_dim, rng, dtype=dtype, name=f"{name}.dense",
                           use_bias=False)
        self.bn = BatchNorm(out_dim, dtype=dtype, name=f"{name}.bn")
        self.act = LeakyRelu()
        self.activation = None  # (batch, out_dim) post-activation values

    def forward(self, x, update_running=True):
        z = self.dense.forward(x)
        u = self.bn.forward(z, update_running=update_running)
        self.activation = self.act.forward(u)
        return self.activation

    def backward(self, d_out):
        d = self.act.backward(d_out)
        d = self.bn.backward(d)
        return self.dense.backward(d)

    def parameters(self):
        return self.dense.parameters() + self.bn.parameters()


class SparseAutoencoder:
    """One sparse autoencoder with cached hidden activations.

    The forward pass keeps the post-activation matrix of each of the 2L
    hidden layers so the penalty and its gradient can be formed; the latent
    and output projections are linear.
    """

    def __init__(self, arch: SaeArchitecture, sparsity: SparsityConfig | None = None,
                 seed: int = 0, dtype=np.float32, name: str = "sae"):
        self.arch = arch
        self.sparsity = sparsity if sparsity is not None else SparsityConfig()
        self.dtype = np.dtype(dtype).type
        self.name = name
        rng = np.random.default_rng(seed)

        self.encoder_blocks: list[_HiddenBlock] = []
        prev = arch.input_dim
        for i, width in enumerate(arch.encoder_hidden):
            self.encoder_blocks.append(_HiddenBlock(prev, width, rng, dtype, f"{name}.enc{i}"))
            prev = width
        # the latent bias would be canceled by the first decoder block's
        # batch norm, so it only exists when no hidden blocks follow
        self.latent_layer = Dense(prev, arch.latent_dim, rng, dtype=dtype,
                                  name=f"{name}.latent",
                                  use_bias=not arch.encoder_hidden)

        self.decoder_blocks: list[_HiddenBlock] = []
        prev = arch.latent_dim
        for i, width in enumerate(arch.decoder_hidden):
            self.decoder_blocks.append(_HiddenBlock(prev, width, rng, dtype, f"{name}.dec{i}"))
            prev = width
        self.output_layer = Dense(prev, arch.input_dim, rng, dtype=dtype, name=f"{name}.out")

    # -- mode / parameter plumbing -------------------------------------------------

    @property
    def _blocks(self):
        return self.encoder_blocks + self.decoder_blocks

    def set_training(self, training: bool) -> None:
        for block in self._blocks:
            block.bn.training = training

    def parameters(self) -> list[Param]:
        params = []
        for block in self.encoder_blocks:
            params.extend(block.parameters())
        params.extend(self.latent_layer.parameters())
        for block in self.decoder_blocks:
            params.extend(block.parameters())
        params.extend(self.output_layer.parameters())
        return params

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All persistent arrays (parameters plus running statistics)."""
        out = [(p.name, p.value) for p in self.parameters()]
        for block in self._blocks:
            out.append((f"{block.bn.gamma.name}.running_mean", block.bn.running_mean))
            out.append((f"{block.bn.gamma.name}.running_var", block.bn.running_var))
        return out

    # -- forward / losses ----------------------------------------------------------

    def forward(self, x: np.ndarray, update_running: bool = True):
        """Returns (latent, reconstruction, hidden activations).

        The activation list covers the 2L hidden layers in forward order;
        the latent layer is excluded.
        """
        x = np.ascontiguousarray(x, dtype=self.dtype)
        h = x
        for block in self.encoder_blocks:
            h = block.forward(h, update_running=update_running)
        latent = self.latent_layer.forward(h)
        d = latent
        for block in self.decoder_blocks:
            d = block.forward(d, update_running=update_running)
        recon = self.output_layer.forward(d)
        activations = [b.activation for b in self._blocks]
        return latent, recon, activations

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Latent representation with frozen statistics (eval-mode pass)."""
        was_training = self.encoder_blocks[0].bn.training
        self.set_training(False)
        try:
            h = np.ascontiguousarray(x, dtype=self.dtype)
            for block in self.encoder_blocks:
                h = block.forward(h, update_running=False)
            return self.latent_layer.forward(h)
        finally:
            self.set_training(was_training)

    def loss(self, x: np.ndarray) -> SaeLosses:
        """Forward-only loss evaluation; running statistics are not touched."""
        x = np.ascontiguousarray(x, dtype=self.dtype)
        _, recon, activations = self.forward(x, update_running=False)
        return self._losses_from(x, recon, activations)

    def _losses_from(self, x, recon, activations) -> SaeLosses:
        cfg = self.sparsity
        rho_hats = [average_activation(a, cfg.clamp_eps) for a in activations]
        pen = kl_penalty(cfg.rho, rho_hats)
        mse = mse_loss(np.asarray(x, dtype=np.float64), np.asarray(recon, dtype=np.float64))
        return SaeLosses(total=mse + cfg.beta * pen, mse=mse, pen=pen)

    def backward(self, d_recon: np.ndarray, penalty_weight: float = 0.0) -> None:
        """Backpropagate from a gradient at the reconstruction, using the
        caches of the most recent forward pass. ``penalty_weight`` adds the
        sparsity-penalty gradient tapped at every hidden activation."""
        d = self.output_layer.backward(np.ascontiguousarray(d_recon, dtype=self.dtype))
        for i in range(len(self.decoder_blocks) - 1, -1, -1):
            block = self.decoder_blocks[i]
            if penalty_weight:
                d = d + penalty_weight * self._penalty_activation_grad(block.activation)
            d = block.backward(d)
        d = self.latent_layer.backward(d)
        for i in range(len(self.encoder_blocks) - 1, -1, -1):
            block = self.encoder_blocks[i]
            if penalty_weight:
                d = d + penalty_weight * self._penalty_activation_grad(block.activation)
            d = block.backward(d)

    def loss_backward(self, x: np.ndarray, update_running: bool = True) -> SaeLosses:
        """Forward plus backward of the combined objective, accumulating into
        parameter gradients."""
        x = np.ascontiguousarray(x, dtype=self.dtype)
        _, recon, activations = self.forward(x, update_running=update_running)
        losses = self._losses_from(x, recon, activations)
        self.backward((recon - x) / x.shape[0], penalty_weight=self.sparsity.beta)
        return losses

    def _penalty_activation_grad(self, activation: np.ndarray) -> np.ndarray:
        """d KL / d a for one hidden layer's post-activation matrix."""
        cfg = self.sparsity
        n = activation.shape[0]
        s = sigmoid(np.asarray(activation, dtype=np.float64))
        raw = s.mean(axis=0)
        rho_hat = np.clip(raw, cfg.clamp_eps, 1.0 - cfg.clamp_eps)
        dkl = -cfg.rho / rho_hat + (1.0 - cfg.rho) / (1.0 - rho_hat)
        # clamped units sit on a flat region of the objective
        dkl[(raw < cfg.clamp_eps) | (raw > 1.0 - cfg.clamp_eps)] = 0.0
        return ((dkl / n) * s * (1.0 - s)).astype(self.dtype)


def sae_loss(sae: SparseAutoencoder, x: np.ndarray) -> SaeLosses:
    """Combined objective (reconstruction + beta * penalty) at the given batch."""
    return sae.loss(x)


@dataclass
class EpochRecord:
    """One epoch of training: the total objective and its two parts.

    ``rec`` is the reconstruction part. ``aux`` is whatever else the
    objective carries: the sparsity penalty for a single autoencoder, the
    pseudo-label cross-entropy for the mixture. ``labels_changed`` is only
    set on epochs where pseudo-labels were refreshed.
    """

    epoch: int
    total: float
    rec: float
    aux: float
    labels_changed: float | None = None

    def as_row(self):
        row = [self.epoch, self.total, self.rec, self.aux]
        if self.labels_changed is not None:
            row.append(self.labels_changed)
        return row


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    columns: tuple[str, ...] = ("epoch", "total", "rec", "aux")

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)

    def totals(self) -> list[float]:
        return [r.total for r in self.records]

    def write_csv(self, path) -> None:
        header = list(self.columns)
        if any(r.labels_changed is not None for r in self.records):
            header.append("labels_changed")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for rec in self.records:
                row = rec.as_row()
                row += [""] * (len(header) - len(row))
                writer.writerow(row)


def iter_batches(n: int, batch_size: int, rng: np.random.Generator,
                 min_batch: int = 2):
    """Yield index arrays for one epoch: a seeded shuffle cut into
    consecutive batches. A trailing batch smaller than ``min_batch`` is
    dropped (batch norm cannot standardize it)."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        batch = order[start:start + batch_size]
        if len(batch) >= min_batch:
            yield batch


def train_sae(sae: SparseAutoencoder, data, epochs: int, batch_size: int = 16,
              lr: float = 0.001, weight_decay: float = 5e-4, seed: int = 0,
              optimizer: str = "adam", log_path=None) -> TrainLog:
    """Train one autoencoder on its combined objective.

    ``data`` is an (n, input_dim) array or anything with a ``vectors``
    attribute holding one. Shuffling is seeded, so identical arguments give
    identical logs and identical final parameters.
    """
    vectors = getattr(data, "vectors", data)
    x = np.asarray(vectors)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training data must be a non-empty (n, dim) matrix")
    if x.shape[0] < batch_size:
        batch_size = x.shape[0]

    params = sae.parameters()
    opt = make_optimizer(optimizer, params, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    log = TrainLog(columns=("epoch", "total", "mse", "pen"))
    sae.set_training(True)
    for epoch in range(1, epochs + 1):
        sums = np.zeros(3)
        seen = 0
        for batch in iter_batches(x.shape[0], batch_size, rng):
            zero_grads(params)
            losses = sae.loss_backward(x[batch])
            opt.step()
            sums += np.array([losses.total, losses.mse, losses.pen]) * len(batch)
            seen += len(batch)
        if seen == 0:
            raise ValueError("no trainable batch (need at least 2 samples)")
        log.append(EpochRecord(epoch, *(sums / seen)))
    sae.set_training(False)
    if log_path is not None:
        log.write_csv(log_path)
    return log
