"""Mixture of sparse autoencoders: k cluster experts, a softmax gating
projection, the joint reconstruction + pseudo-label objective, two-phase
training (pre-train, then joint main training with periodic pseudo-label
refresh), and cluster inference via the gate's argmax.
"""

from __future__ import annotations

import copy
import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .cluster import kmeans_fit
from .nn import (
    Dense,
    LeakyRelu,
    Param,
    make_optimizer,
    softmax_backward,
    softmax_rows,
    zero_grads,
)
from .sae import (
    EpochRecord,
    SaeArchitecture,
    SparseAutoencoder,
    SparsityConfig,
    TrainLog,
    iter_batches,
    train_sae,
)

CHECKPOINT_MAGIC = b"MSAE"
CHECKPOINT_VERSION = 1


class GatingProjection:
    """Softmax router from an embedding to a distribution over k experts.

    Default is a single affine map; setting ``hidden_dim`` switches to a
    one-hidden-layer MLP with leaky ReLU before the softmax.
    """

    def __init__(self, input_dim: int, k: int, hidden_dim: int | None = None,
                 seed: int = 0, dtype=np.float32, name: str = "gate"):
        self.input_dim = input_dim
        self.k = k
        self.hidden_dim = hidden_dim
        rng = np.random.default_rng(seed)
        if hidden_dim:
            self._hidden = Dense(input_dim, hidden_dim, rng, dtype=dtype, name=f"{name}.hidden")
            self._act = LeakyRelu()
            self._out = Dense(hidden_dim, k, rng, dtype=dtype, name=f"{name}.out")
        else:
            self._hidden = None
            self._act = None
            self._out = Dense(input_dim, k, rng, dtype=dtype, name=f"{name}.out")
        # zero output weights: routing starts uniform, so early gradients
        # come from the pseudo-labels rather than a random initial routing
        self._out.weight.value[...] = 0.0
        self._p = None

    @property
    def weight(self) -> Param:
        """The (k x input_dim) projection weights of the affine gate."""
        if self._hidden is not None:
            raise AttributeError("hidden-layer gate has no single weight matrix")
        return self._out.weight

    @property
    def bias(self) -> Param:
        if self._hidden is not None:
            raise AttributeError("hidden-layer gate has no single bias vector")
        return self._out.bias

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Routing probabilities, cached for a following backward pass."""
        h = x
        if self._hidden is not None:
            h = self._act.forward(self._hidden.forward(h))
        logits = self._out.forward(h)
        self._p = softmax_rows(logits)
        return self._p

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        """Pure forward pass: no caches are written."""
        h = np.asarray(x)
        if self._hidden is not None:
            w, b = self._hidden.weight.value, self._hidden.bias.value
            z = h @ w.T + b
            h = np.where(z >= 0, z, self._act.slope * z)
        logits = h @ self._out.weight.value.T + self._out.bias.value
        return softmax_rows(logits)

    def backward(self, d_p: np.ndarray) -> np.ndarray:
        d_logits = softmax_backward(self._p, d_p)
        d = self._out.backward(d_logits)
        if self._hidden is not None:
            d = self._hidden.backward(self._act.backward(d))
        return d

    def parameters(self) -> list[Param]:
        params = []
        if self._hidden is not None:
            params.extend(self._hidden.parameters())
        params.extend(self._out.parameters())
        return params

    def state_arrays(self):
        return [(p.name, p.value) for p in self.parameters()]


@dataclass
class PseudoLabelState:
    """Current cluster assignment of every sample, tagged with the epoch it
    was produced at (0 = the pre-training initializer)."""

    labels: np.ndarray
    as_of_epoch: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def one_hot(self, k: int) -> np.ndarray:
        if self.labels.min(initial=0) < 0 or (self.labels.size and self.labels.max() >= k):
            raise ValueError("pseudo-label out of range")
        eye = np.eye(k)
        return eye[self.labels]


def pseudo_label_loss(p_hat: np.ndarray, labels, clamp: float = 1e-12) -> float:
    """Cross-entropy between hard pseudo-labels and gate predictions:
    -(1/N) sum_i log p_hat[i, label_i], with the log clamped."""
    if isinstance(labels, PseudoLabelState):
        labels = labels.labels
    p_hat = np.asarray(p_hat, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= p_hat.shape[1]:
        raise ValueError("pseudo-label out of range")
    picked = p_hat[np.arange(p_hat.shape[0]), labels]
    return float(-np.log(np.maximum(picked, clamp)).mean())


@dataclass
class MainLosses:
    total: float
    rec: float
    ent: float


class MixSae:
    """k sparse autoencoders routed by a gating projection.

    The autoencoders share one architecture and sparsity configuration; the
    latent width defaults to k. Training hyperparameters live here so a
    fitted model is reproducible from its constructor arguments plus seeds.
    """

    def __init__(self, input_dim: int, k: int,
                 encoder_hidden: tuple[int, ...] = (256, 128, 64, 32),
                 latent_dim: int | None = None,
                 sparsity: SparsityConfig | None = None,
                 alpha: float = 1.0, tau: int = 10,
                 main_epochs: int = 20, pretrain_epochs: int = 50,
                 per_cluster_epochs: int = 20, batch_size: int = 16,
                 lr: float = 0.001, weight_decay: float = 5e-4,
                 optimizer: str = "adam", gate_hidden_dim: int | None = None,
                 rec_reduction: str = "sum", dtype=np.float32, seed: int = 0):
        if k < 2:
            raise ValueError(f"a mixture needs k >= 2 clusters, got k={k}")
        if rec_reduction not in ("sum", "mean"):
            raise ValueError(f"rec_reduction must be 'sum' or 'mean', got {rec_reduction!r}")
        self.input_dim = input_dim
        self.k = k
        self.arch = SaeArchitecture(
            input_dim=input_dim,
            latent_dim=k if latent_dim is None else latent_dim,
            encoder_hidden=tuple(encoder_hidden),
        )
        self.sparsity = sparsity if sparsity is not None else SparsityConfig()
        self.alpha = alpha
        self.tau = tau
        self.main_epochs = main_epochs
        self.pretrain_epochs = pretrain_epochs
        self.per_cluster_epochs = per_cluster_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.optimizer = optimizer
        self.gate_hidden_dim = gate_hidden_dim
        self.rec_reduction = rec_reduction
        self.dtype = np.dtype(dtype).type
        self.seed = seed

        ss = np.random.SeedSequence(seed)
        child_seeds = ss.generate_state(k + 2)
        self.autoencoders = [
            SparseAutoencoder(self.arch, self.sparsity, seed=int(child_seeds[i]),
                              dtype=dtype, name=f"ae{i}")
            for i in range(k)
        ]
        self.gate = GatingProjection(input_dim, k, hidden_dim=gate_hidden_dim,
                                     seed=int(child_seeds[k]), dtype=dtype)
        self._pretrain_seed = int(child_seeds[k + 1])
        self.pretrain_ae: SparseAutoencoder | None = None

    # -- forward pieces --------------------------------------------------------

    def gate_forward(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=self.dtype)
        return self.gate.forward(x)

    def set_training(self, training: bool) -> None:
        for ae in self.autoencoders:
            ae.set_training(training)

    def _reconstruction_errors(self, x: np.ndarray, update_running: bool):
        """Per-sample squared reconstruction error against every expert.

        Returns (recons, e) with e shaped (n, k); errors accumulate in
        float64 regardless of the model dtype.
        """
        x64 = np.asarray(x, dtype=np.float64)
        recons = []
        e = np.empty((x.shape[0], self.k), dtype=np.float64)
        for j, ae in enumerate(self.autoencoders):
            _, recon, _ = ae.forward(x, update_running=update_running)
            diff = x64 - np.asarray(recon, dtype=np.float64)
            e[:, j] = (diff * diff).sum(axis=1)
            recons.append(recon)
        if self.rec_reduction == "mean":
            e /= self.input_dim
        return recons, e

    def weighted_reconstruction_loss(self, x: np.ndarray) -> float:
        """Gate-weighted Gaussian reconstruction kernel, negated and averaged;
        always in [-1, 0)."""
        x = np.ascontiguousarray(x, dtype=self.dtype)
        p_hat = self.gate.probabilities(x).astype(np.float64)
        _, e = self._reconstruction_errors(x, update_running=False)
        kernel = np.exp(-0.5 * e)
        return float(-(p_hat * kernel).sum() / x.shape[0])

    def main_loss(self, x: np.ndarray, pseudo: PseudoLabelState | np.ndarray) -> MainLosses:
        """Forward-only evaluation of the joint objective on one batch."""
        labels = pseudo.labels if isinstance(pseudo, PseudoLabelState) else np.asarray(pseudo)
        x = np.ascontiguousarray(x, dtype=self.dtype)
        p_hat = self.gate.probabilities(x).astype(np.float64)
        _, e = self._reconstruction_errors(x, update_running=False)
        kernel = np.exp(-0.5 * e)
        l_rec = float(-(p_hat * kernel).sum() / x.shape[0])
        l_ent = pseudo_label_loss(p_hat, labels)
        return MainLosses(total=l_rec + self.alpha * l_ent, rec=l_rec, ent=l_ent)

    def main_loss_backward(self, x: np.ndarray, labels: np.ndarray,
                           update_running: bool = True) -> MainLosses:
        """Joint objective with gradients into every expert and the gate.

        The reconstruction term reaches the experts through the kernel and
        the gate through the mixture weights; the pseudo-label term reaches
        the gate only.
        """
        x = np.ascontiguousarray(x, dtype=self.dtype)
        labels = np.asarray(labels, dtype=np.int64)
        n = x.shape[0]

        p_hat = self.gate_forward(x)
        p64 = p_hat.astype(np.float64)
        recons, e = self._reconstruction_errors(x, update_running=update_running)
        kernel = np.exp(-0.5 * e)

        l_rec = float(-(p64 * kernel).sum() / n)
        picked = p64[np.arange(n), labels]
        clamp = 1e-12
        l_ent = float(-np.log(np.maximum(picked, clamp)).mean())

        # gate: d l_rec / d p = -K/n; d l_ent / d p is -1/(n p) on the labeled column
        d_p = -kernel / n
        ent_grad = np.zeros_like(d_p)
        live = picked > clamp
        ent_grad[np.arange(n)[live], labels[live]] = -1.0 / (n * picked[live])
        d_p += self.alpha * ent_grad
        self.gate.backward(d_p.astype(self.dtype))

        # experts: d l_rec / d recon_j = (p_j K_j / n) * (recon_j - x)
        x64 = np.asarray(x, dtype=np.float64)
        scale = p64 * kernel / n
        if self.rec_reduction == "mean":
            scale = scale / self.input_dim
        for j, ae in enumerate(self.autoencoders):
            d_recon = scale[:, j:j + 1] * (np.asarray(recons[j], np.float64) - x64)
            ae.backward(d_recon.astype(self.dtype), penalty_weight=0.0)

        return MainLosses(total=l_rec + self.alpha * l_ent, rec=l_rec, ent=l_ent)

    def infer_labels(self, x: np.ndarray) -> np.ndarray:
        """Cluster index per row: argmax of the gate distribution, ties going
        to the lowest index. Pure; no model state is touched."""
        x = np.ascontiguousarray(x, dtype=self.dtype)
        return np.argmax(self.gate.probabilities(x), axis=1).astype(np.int64)

    def parameters(self) -> list[Param]:
        params = []
        for ae in self.autoencoders:
            params.extend(ae.parameters())
        params.extend(self.gate.parameters())
        return params

    # -- training --------------------------------------------------------------

    def pretrain(self, data, seed: int | None = None) -> PseudoLabelState:
        """Phase one: fit a single autoencoder on everything, cluster its
        latents with k-means++ for the initial pseudo-labels, then fit each
        expert on its own label subset.

        A subset too small to batch-normalize (fewer than 2 points) falls
        back to training that expert on the full dataset; a warning records
        the substitution.
        """
        vectors = getattr(data, "vectors", data)
        x = np.ascontiguousarray(vectors, dtype=self.dtype)
        if x.shape[0] < self.k:
            raise ValueError(f"need at least k={self.k} samples, got {x.shape[0]}")
        if seed is None:
            seed = self._pretrain_seed
        ss = np.random.SeedSequence(seed)
        seeds = ss.generate_state(self.k + 3)

        self.pretrain_ae = SparseAutoencoder(
            self.arch, self.sparsity, seed=int(seeds[0]), dtype=self.dtype, name="ae_pre")
        self.pretrain_log = train_sae(
            self.pretrain_ae, x, epochs=self.pretrain_epochs,
            batch_size=self.batch_size, lr=self.lr, weight_decay=self.weight_decay,
            seed=int(seeds[1]), optimizer=self.optimizer)

        latents = self.pretrain_ae.encode(x).astype(np.float64)
        _, labels = kmeans_fit(latents, self.k, seed=int(seeds[2]))

        for i, ae in enumerate(self.autoencoders):
            subset = x[labels == i]
            if subset.shape[0] < 2:
                warnings.warn(
                    f"pretrain cluster {i} has {subset.shape[0]} point(s); "
                    f"training its expert on the full dataset instead")
                subset = x
            train_sae(ae, subset, epochs=self.per_cluster_epochs,
                      batch_size=self.batch_size, lr=self.lr,
                      weight_decay=self.weight_decay, seed=int(seeds[3 + i]),
                      optimizer=self.optimizer)
        return PseudoLabelState(labels, as_of_epoch=0)

    def main_train(self, data, pseudo: PseudoLabelState,
                   seed: int | None = None) -> TrainLog:
        """Phase two: jointly optimize all experts and the gate on the main
        objective; every tau epochs the pseudo-labels are replaced with the
        gate's current argmax over the whole dataset."""
        vectors = getattr(data, "vectors", data)
        x = np.ascontiguousarray(vectors, dtype=self.dtype)
        n = x.shape[0]
        if pseudo.labels.shape[0] != n:
            raise ValueError("pseudo-label count does not match the dataset")
        if seed is None:
            seed = self._pretrain_seed + 1

        params = self.parameters()
        opt = make_optimizer(self.optimizer, params, lr=self.lr,
                             weight_decay=self.weight_decay)
        rng = np.random.default_rng(seed)
        log = TrainLog(columns=("epoch", "total", "rec", "ent"))
        self.set_training(True)
        batch_size = min(self.batch_size, n)
        for epoch in range(1, self.main_epochs + 1):
            sums = np.zeros(3)
            seen = 0
            for batch in iter_batches(n, batch_size, rng):
                zero_grads(params)
                losses = self.main_loss_backward(x[batch], pseudo.labels[batch])
                opt.step()
                sums += np.array([losses.total, losses.rec, losses.ent]) * len(batch)
                seen += len(batch)
            record = EpochRecord(epoch, *(sums / max(seen, 1)))
            if self.tau > 0 and epoch % self.tau == 0:
                new_labels = self.infer_labels(x)
                record.labels_changed = float((new_labels != pseudo.labels).mean())
                pseudo.labels = new_labels
                pseudo.as_of_epoch = epoch
            log.append(record)
        self.set_training(False)
        return log

    def fit(self, data, seed: int | None = None):
        """Convenience wrapper: pretrain, main-train, return final labels."""
        pseudo = self.pretrain(data, seed=seed)
        self.main_train(data, pseudo, seed=None if seed is None else seed + 1)
        vectors = getattr(data, "vectors", data)
        return self.infer_labels(np.ascontiguousarray(vectors, dtype=self.dtype))

    # -- persistence and relabeling ---------------------------------------------

    def _config_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "k": self.k,
            "encoder_hidden": list(self.arch.encoder_hidden),
            "latent_dim": self.arch.latent_dim,
            "rho": self.sparsity.rho,
            "beta": self.sparsity.beta,
            "clamp_eps": self.sparsity.clamp_eps,
            "alpha": self.alpha,
            "tau": self.tau,
            "main_epochs": self.main_epochs,
            "pretrain_epochs": self.pretrain_epochs,
            "per_cluster_epochs": self.per_cluster_epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "optimizer": self.optimizer,
            "gate_hidden_dim": self.gate_hidden_dim,
            "rec_reduction": self.rec_reduction,
        }

    def state_arrays(self):
        out = []
        for ae in self.autoencoders:
            out.extend(ae.state_arrays())
        out.extend(self.gate.state_arrays())
        return out

    def save(self, path) -> None:
        """Versioned binary checkpoint: config header plus every parameter
        and running statistic as little-endian float32."""
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<B", CHECKPOINT_VERSION))
            blob = json.dumps(self._config_dict(), sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            arrays = self.state_arrays()
            fh.write(struct.pack("<I", len(arrays)))
            for name, arr in arrays:
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<B", arr.ndim))
                for dim in arr.shape:
                    fh.write(struct.pack("<I", dim))
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "MixSae":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")
        version = raw[4]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unknown checkpoint version {version}")
        off = 5
        (cfg_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        cfg = json.loads(raw[off:off + cfg_len].decode("utf-8"))
        off += cfg_len
        cfg["encoder_hidden"] = tuple(cfg["encoder_hidden"])
        sparsity = SparsityConfig(rho=cfg.pop("rho"), beta=cfg.pop("beta"),
                                  clamp_eps=cfg.pop("clamp_eps"))
        model = cls(sparsity=sparsity, dtype=np.float32, **cfg)
        (n_arrays,) = struct.unpack_from("<I", raw, off)
        off += 4
        arrays = model.state_arrays()
        if n_arrays != len(arrays):
            raise ValueError("checkpoint array count does not match the model")
        for name, arr in arrays:
            (name_len,) = struct.unpack_from("<H", raw, off)
            off += 2
            stored = raw[off:off + name_len].decode("utf-8")
            off += name_len
            if stored != name:
                raise ValueError(f"checkpoint array order mismatch: {stored} vs {name}")
            (ndim,) = struct.unpack_from("<B", raw, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            if shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {shape} vs {arr.shape}")
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
            off += 4 * count
            arr[...] = data.reshape(shape)
        if off != len(raw):
            raise ValueError("trailing bytes after checkpoint payload")
        return model

    def permute_clusters(self, perm) -> "MixSae":
        """A copy whose cluster i has become perm[i]: experts reordered and
        the gate's output rows moved accordingly."""
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(self.k)):
            raise ValueError("perm must be a permutation of range(k)")
        other = copy.deepcopy(self)
        for i in range(self.k):
            other.autoencoders[perm[i]] = copy.deepcopy(self.autoencoders[i])
        out_old = self.gate._out
        out_new = other.gate._out
        for i in range(self.k):
            out_new.weight.value[perm[i]] = out_old.weight.value[i]
            out_new.bias.value[perm[i]] = out_old.bias.value[i]
        return other
