"""Toy dense encoders, the Euclidean-to-hyperbolic embedding pipeline, and the
SGD training loops for old (base-loss-only) and new (HBCT-aligned) generations.

Encoders are tanh MLPs; a linear encoder is a single layer with no activation.
All training runs on the scalar autodiff tape and is bit-reproducible for a
fixed seed.  Old-model embeddings are computed once up front (the old model is
frozen) and enter the new model's loss as constants.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import InvalidArgumentError, TrainingFailureError, NumericalDomainError
from .losses import AlignmentConfig, MlrHead, hexpm_origin, total_loss
from .manifold import LorentzPoint, ManifoldConfig, expm_origin, rescale_clip

CHECKPOINT_MAGIC = b"HBCT"
CHECKPOINT_VERSION = 1
KIND_MODEL = 1


@dataclass
class ClipPolicy:
    """Generation-dependent clipping threshold: zeta(g) = zeta_old + g * step."""

    zeta_old: float = 1.0
    zeta_step: float = 0.2

    def zeta(self, generation: int) -> float:
        z = self.zeta_old + generation * self.zeta_step
        if z <= 0:
            raise InvalidArgumentError(f"clip threshold {z} for generation {generation}")
        return z


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    cosine_annealing: bool = True

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise InvalidArgumentError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise InvalidArgumentError("momentum/weight_decay must be >= 0")


class EncoderModel:
    """Dense tanh MLP: layers of (weight, bias), tanh between layers only."""

    def __init__(self, layers, generation_tag=0):
        self.layers = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64))
                       for W, b in layers]
        self.generation_tag = int(generation_tag)

    @classmethod
    def init(cls, input_dim, hidden_dims, output_dim, rng, generation_tag=0):
        dims = [input_dim, *hidden_dims, output_dim]
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            W = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_out, fan_in))
            b = np.zeros(fan_out)
            layers.append((W, b))
        return cls(layers, generation_tag)

    @property
    def input_dim(self):
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self):
        return self.layers[-1][0].shape[0]

    @property
    def hidden_dims(self):
        return tuple(W.shape[0] for W, _ in self.layers[:-1])

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Euclidean embedding z for one input (or a batch, row-wise)."""
        h = np.asarray(x, dtype=np.float64)
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            h = h @ W.T + b
            if i < last:
                h = np.tanh(h)
        return h

    def copy(self, generation_tag=None):
        tag = self.generation_tag if generation_tag is None else generation_tag
        return EncoderModel([(W.copy(), b.copy()) for W, b in self.layers], tag)

    def params(self):
        out = []
        for W, b in self.layers:
            out.append(W)
            out.append(b)
        return out


def embed(model: EncoderModel, x, policy: ClipPolicy, mcfg: ManifoldConfig):
    """x -> z (rescaled/clipped) -> hyperboloid point; returns (z, h)."""
    z = model.forward(np.asarray(x, dtype=np.float64))
    zp = rescale_clip(z, policy.zeta(model.generation_tag), mcfg)
    return zp, expm_origin(zp, mcfg)


def embed_batch(model: EncoderModel, X, policy: ClipPolicy, mcfg: ManifoldConfig):
    """Vectorized embed over rows of X.

    Returns (Z, times, spaces, uncertainties); spaces has shape (N, d).
    """
    X = np.asarray(X, dtype=np.float64)
    Z = model.forward(X) / math.sqrt(mcfg.dim_d)
    zeta = policy.zeta(model.generation_tag)
    norms = np.linalg.norm(Z, axis=1)
    over = norms > zeta
    Z[over] *= (zeta / norms[over])[:, None]
    sqrt_K = math.sqrt(mcfg.curvature_K)
    r = np.linalg.norm(Z, axis=1)
    a = sqrt_K * r
    times = np.cosh(a) / sqrt_K
    coeff = np.where(a < 1e-8, 1.0, np.sinh(a) / np.where(a == 0, 1.0, a))
    spaces = coeff[:, None] * Z
    unc = 1.0 - np.linalg.norm(spaces, axis=1) / (sqrt_K * times)
    return Z, times, spaces, unc


# ---------------------------------------------------------------------------
# Tape-side building blocks

def _vars_from(tape: Tape, arrays):
    nested = []
    for a in arrays:
        if a.ndim == 1:
            nested.append([tape.var(v) for v in a])
        else:
            nested.append([[tape.var(v) for v in row] for row in a])
    return nested


def _leaf_list(nested):
    out = []
    for a in nested:
        if a and isinstance(a[0], list):
            for row in a:
                out.extend(row)
        else:
            out.extend(a)
    return out


def _grads_like(adj, nested, arrays):
    grads = []
    for a, arr in zip(nested, arrays):
        if arr.ndim == 1:
            grads.append(np.array([adj[v.idx] for v in a]))
        else:
            grads.append(np.array([[adj[v.idx] for v in row] for row in a]))
    return grads


def _forward_vars(layer_vars, x):
    h = list(x)
    n_layers = len(layer_vars) // 2
    for li in range(n_layers):
        W = layer_vars[2 * li]
        b = layer_vars[2 * li + 1]
        out = [ad.add(ad.dot(Wr, h), bi) for Wr, bi in zip(W, b)]
        if li < n_layers - 1:
            out = [ad.tanh(o) for o in out]
        h = out
    return h


def _rescale_clip_vars(z, zeta, d):
    inv = 1.0 / math.sqrt(d)
    zp = [ad.mul(zi, inv) for zi in z]
    n = ad.norm(zp)
    if ad.value(n) > zeta:
        s = ad.div(zeta, n)
        zp = [ad.mul(zi, s) for zi in zp]
    return zp


def embed_vars(layer_vars, x, zeta, mcfg: ManifoldConfig):
    """Tape-side embed: returns the (time, space) scalar point."""
    z = _forward_vars(layer_vars, x)
    zp = _rescale_clip_vars(z, zeta, mcfg.dim_d)
    return hexpm_origin(zp, mcfg)


# ---------------------------------------------------------------------------
# Training

def _lr_at(tcfg: TrainConfig, epoch: int) -> float:
    if not tcfg.cosine_annealing:
        return tcfg.learning_rate
    return tcfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / tcfg.epochs))


def _train(X, y, num_classes, arch, mcfg, policy, tcfg, generation,
           align_cfg=None, old_model=None, init_from_old=False):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise InvalidArgumentError("dataset must be a non-empty 2-d array")
    if len(X) != len(y):
        raise InvalidArgumentError("inputs and labels must align")
    rng = np.random.default_rng(tcfg.seed)

    if init_from_old:
        if old_model is None:
            raise InvalidArgumentError("init_from_old requires an old model")
        model = old_model.copy(generation_tag=generation)
    else:
        model = EncoderModel.init(X.shape[1], arch, mcfg.dim_d, rng, generation)
    head = rng.normal(0.0, 0.1, size=(num_classes, mcfg.dim_d))

    aligned = align_cfg is not None and align_cfg.lambda_align > 0.0
    if aligned:
        # old model is frozen: embed the whole training set once, as constants
        _, o_times, o_spaces, o_unc = embed_batch(old_model, X, policy, mcfg)
        old_pts = [(float(t), [float(v) for v in s]) for t, s in zip(o_times, o_spaces)]
        old_unc = [float(u) for u in o_unc]
    zeta = policy.zeta(generation)
    eff_align = align_cfg if aligned else AlignmentConfig(lambda_align=0.0)

    arrays = model.params() + [head]
    vel = [np.zeros_like(a) for a in arrays]
    n_params_layers = len(model.params())
    epoch_losses = []
    step = 0
    for epoch in range(tcfg.epochs):
        lr = _lr_at(tcfg, epoch)
        perm = rng.permutation(len(X))
        losses = []
        for start in range(0, len(X), tcfg.batch_size):
            idx = perm[start:start + tcfg.batch_size]
            if aligned and len(idx) < 2:
                continue  # contrastive loss needs >= 2 pairs
            tape = Tape()
            nested = _vars_from(tape, arrays)
            layer_vars = nested[:n_params_layers]
            head_vars = MlrHead(nested[n_params_layers])
            batch_new, labels, batch_old, unc = [], [], [], []
            try:
                for i in idx:
                    batch_new.append(embed_vars(layer_vars, [float(v) for v in X[i]],
                                                zeta, mcfg))
                    labels.append(int(y[i]))
                    if aligned:
                        batch_old.append(old_pts[i])
                        unc.append(old_unc[i])
                loss = total_loss(batch_new, labels, batch_old if aligned else None,
                                  unc if aligned else None, head_vars, eff_align, mcfg)
            except NumericalDomainError as e:
                raise TrainingFailureError(f"loss diverged at step {step}: {e}",
                                           step=step) from e
            if not math.isfinite(ad.value(loss)):
                raise TrainingFailureError(f"non-finite loss at step {step}", step=step)
            adj = ad.backward(tape, loss)
            grads = _grads_like(adj, nested, arrays)
            for a, g, v in zip(arrays, grads, vel):
                g = g + tcfg.weight_decay * a
                v *= tcfg.momentum
                v -= lr * g
                a += v
            if not all(np.all(np.isfinite(a)) for a in arrays):
                raise TrainingFailureError(f"non-finite parameters at step {step}",
                                           step=step)
            losses.append(ad.value(loss))
            step += 1
        epoch_losses.append(float(np.mean(losses)) if losses else float("nan"))
    return model, head, epoch_losses


def train_old(X, y, num_classes, mcfg: ManifoldConfig, policy: ClipPolicy,
              tcfg: TrainConfig, arch=()):
    """Train generation 0 with the base classification loss only."""
    return _train(X, y, num_classes, arch, mcfg, policy, tcfg, generation=0)


def train_new(X, y, num_classes, old_model: EncoderModel, align_cfg: AlignmentConfig,
              mcfg: ManifoldConfig, policy: ClipPolicy, tcfg: TrainConfig,
              arch=(), init_from_old=False):
    """Train the next generation against a frozen old model."""
    return _train(X, y, num_classes, arch, mcfg, policy, tcfg,
                  generation=old_model.generation_tag + 1,
                  align_cfg=align_cfg, old_model=old_model,
                  init_from_old=init_from_old)


def mlr_logits_batch(head: np.ndarray, spaces: np.ndarray, mcfg: ManifoldConfig):
    """Vectorized MLR logits for rows of hyperboloid space coordinates."""
    sqrt_K = math.sqrt(mcfg.curvature_K)
    wn = np.linalg.norm(head, axis=1)
    safe = np.where(wn < 1e-12, 1.0, wn)
    s = spaces @ head.T
    logits = (safe / sqrt_K) * np.arcsinh(sqrt_K * s / safe)
    logits[:, wn < 1e-12] = 0.0
    return logits


def classification_accuracy(model, head, X, y, policy, mcfg):
    _, _, spaces, _ = embed_batch(model, X, policy, mcfg)
    pred = np.argmax(mlr_logits_batch(np.asarray(head), spaces, mcfg), axis=1)
    return float(np.mean(pred == np.asarray(y)))


# ---------------------------------------------------------------------------
# Checkpoint container (exact byte layout documented in the README)

def save_checkpoint(path, model: EncoderModel, head, mcfg: ManifoldConfig,
                    policy: ClipPolicy):
    head = np.asarray(head, dtype=np.float64)
    zeta = policy.zeta(model.generation_tag)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IIi", CHECKPOINT_VERSION, KIND_MODEL,
                            model.generation_tag))
        f.write(struct.pack("<dd", mcfg.curvature_K, zeta))
        f.write(struct.pack("<II", len(model.layers), head.shape[0]))
        for W, _ in model.layers:
            f.write(struct.pack("<II", W.shape[1], W.shape[0]))
        for W, b in model.layers:
            f.write(W.astype("<f8").tobytes(order="C"))
            f.write(b.astype("<f8").tobytes())
        f.write(head.astype("<f8").tobytes(order="C"))


def load_checkpoint(path):
    """Returns (model, head, curvature_K, zeta)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise InvalidArgumentError("not an HBCT checkpoint (bad magic)")
    version, kind, generation = struct.unpack_from("<IIi", data, 4)
    if version != CHECKPOINT_VERSION or kind != KIND_MODEL:
        raise InvalidArgumentError(f"unsupported checkpoint version/kind {version}/{kind}")
    K, zeta = struct.unpack_from("<dd", data, 16)
    n_layers, n_classes = struct.unpack_from("<II", data, 32)
    off = 40
    dims = []
    for _ in range(n_layers):
        in_d, out_d = struct.unpack_from("<II", data, off)
        dims.append((in_d, out_d))
        off += 8
    layers = []
    for in_d, out_d in dims:
        W = np.frombuffer(data, "<f8", in_d * out_d, off).reshape(out_d, in_d).copy()
        off += 8 * in_d * out_d
        b = np.frombuffer(data, "<f8", out_d, off).copy()
        off += 8 * out_d
        layers.append((W, b))
    d = dims[-1][1]
    head = np.frombuffer(data, "<f8", n_classes * d, off).reshape(n_classes, d).copy()
    model = EncoderModel(layers, generation_tag=generation)
    return model, head, K, zeta
