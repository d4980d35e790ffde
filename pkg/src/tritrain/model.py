"""Sigmoid-hidden MLP classifiers with analytic gradients.

Two architectures share one code path:

* :class:`MlpNet`, a single softmax head over one sigmoid hidden layer;
* :class:`MultiHeadNet`, one shared hidden layer feeding three softmax heads.
  The loss sums the per-head mean cross-entropies and adds
  ``gamma * ||W_1^T W_2||_F^2`` so that heads 1 and 2 are pushed towards
  using different hidden features. Head 3 never enters that penalty.

Batches are ``(X, y)`` pairs where ``X`` is a dense array or CSR matrix.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data import Dataset, SparseVector, write_atomic

N_HEADS = 3


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss encountered in epoch {epoch}")


class Vote(str, enum.Enum):
    MAJORITY = "majority"
    HEAD3 = "head3"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 5
    batch_size: int = 16
    gamma: float = 0.01
    seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    predicted: int = field(init=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probs must be a distribution")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "predicted", int(np.argmax(p)))


@dataclass(eq=False)
class MlpNet:
    W_in: np.ndarray
    b_in: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.W_in.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W_in.shape[0]

    @property
    def num_classes(self) -> int:
        return self.W_out.shape[1]

    def heads(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.W_out, self.b_out)]

    def params(self) -> dict[str, np.ndarray]:
        return {"W_in": self.W_in, "b_in": self.b_in, "W_out": self.W_out, "b_out": self.b_out}

    def copy(self) -> "MlpNet":
        return MlpNet(self.W_in.copy(), self.b_in.copy(), self.W_out.copy(), self.b_out.copy())


@dataclass(eq=False)
class MultiHeadNet:
    W_in: np.ndarray
    b_in: np.ndarray
    W_heads: list[np.ndarray]
    b_heads: list[np.ndarray]

    def __post_init__(self):
        if len(self.W_heads) != N_HEADS or len(self.b_heads) != N_HEADS:
            raise ValueError("MultiHeadNet needs exactly three heads")
        shape = self.W_heads[0].shape
        if any(W.shape != shape for W in self.W_heads) or shape[0] != self.W_in.shape[1]:
            raise ValueError("head shapes disagree with the shared layer")

    @property
    def hidden_dim(self) -> int:
        return self.W_in.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W_in.shape[0]

    @property
    def num_classes(self) -> int:
        return self.W_heads[0].shape[1]

    def heads(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.W_heads, self.b_heads))

    def params(self) -> dict[str, np.ndarray]:
        out = {"W_in": self.W_in, "b_in": self.b_in}
        for i in range(N_HEADS):
            out[f"W_{i + 1}"] = self.W_heads[i]
            out[f"b_{i + 1}"] = self.b_heads[i]
        return out

    def copy(self) -> "MultiHeadNet":
        return MultiHeadNet(
            self.W_in.copy(), self.b_in.copy(),
            [W.copy() for W in self.W_heads], [b.copy() for b in self.b_heads],
        )


Net = MlpNet | MultiHeadNet


def _head_keys(net: Net) -> list[tuple[str, str]]:
    if isinstance(net, MlpNet):
        return [("W_out", "b_out")]
    return [(f"W_{i}", f"b_{i}") for i in range(1, N_HEADS + 1)]


def all_finite(net: Net) -> bool:
    return all(np.all(np.isfinite(p)) for p in net.params().values())


# -- initialization -----------------------------------------------------------


def init_mlp(input_dim: int, num_classes: int, cfg: TrainConfig, hidden_dim: int = 50) -> MlpNet:
    """Uniform weights in ``[-init_scale, init_scale]``, zero biases."""
    if min(input_dim, num_classes, hidden_dim) < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(cfg.seed)
    s = cfg.init_scale
    return MlpNet(
        rng.uniform(-s, s, (input_dim, hidden_dim)),
        np.zeros(hidden_dim),
        rng.uniform(-s, s, (hidden_dim, num_classes)),
        np.zeros(num_classes),
    )


def init_multihead(
    input_dim: int,
    num_classes: int,
    cfg: TrainConfig,
    hidden_dim: int = 50,
    identical_heads: bool = False,
) -> MultiHeadNet:
    if min(input_dim, num_classes, hidden_dim) < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(cfg.seed)
    s = cfg.init_scale
    W_in = rng.uniform(-s, s, (input_dim, hidden_dim))
    if identical_heads:
        W = rng.uniform(-s, s, (hidden_dim, num_classes))
        W_heads = [W.copy() for _ in range(N_HEADS)]
    else:
        W_heads = [rng.uniform(-s, s, (hidden_dim, num_classes)) for _ in range(N_HEADS)]
    return MultiHeadNet(W_in, np.zeros(hidden_dim), W_heads,
                        [np.zeros(num_classes) for _ in range(N_HEADS)])


# -- forward ----------------------------------------------------------------


sigmoid = expit


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_dim(net: Net, X) -> None:
    if X.shape[1] != net.input_dim:
        raise ValueError(f"input has dimension {X.shape[1]}, net expects {net.input_dim}")


def hidden(net: Net, X) -> np.ndarray:
    _check_dim(net, X)
    return sigmoid(np.asarray(X @ net.W_in) + net.b_in)


def predict_proba(net: Net, X, head: int | None = None) -> np.ndarray:
    """Class distributions for every row of ``X``; ``head`` is 1-based."""
    H = hidden(net, X)
    if isinstance(net, MlpNet):
        return softmax(H @ net.W_out + net.b_out)
    if head is None:
        raise ValueError("MultiHeadNet needs a head index (1..3)")
    W, b = net.heads()[_head_index(head)]
    return softmax(H @ W + b)


def predict_proba_heads(net: MultiHeadNet, X) -> list[np.ndarray]:
    H = hidden(net, X)
    return [softmax(H @ W + b) for W, b in net.heads()]


def _head_index(head: int) -> int:
    if not 1 <= head <= N_HEADS:
        raise ValueError("head must be 1, 2 or 3")
    return head - 1


def _row(net: Net, x: SparseVector):
    if x.indices and x.indices[-1] >= net.input_dim:
        raise ValueError(f"feature index {x.indices[-1]} exceeds net input dimension")
    return sp.csr_matrix((x.weights, x.indices, [0, len(x)]), shape=(1, net.input_dim))


def forward(net: MlpNet, x: SparseVector) -> Prediction:
    return Prediction(predict_proba(net, _row(net, x))[0])


def forward_head(net: MultiHeadNet, head: int, x: SparseVector) -> Prediction:
    return Prediction(predict_proba(net, _row(net, x), head)[0])


def majority_vote_probs(P1: np.ndarray, P2: np.ndarray, P3: np.ndarray):
    """Row-wise two-of-three vote over distributions.

    A three-way split goes to the class with the largest summed probability
    (lowest index on ties). Returns (labels, mean distribution).
    """
    a1, a2, a3 = (np.argmax(P, axis=1) for P in (P1, P2, P3))
    total = P1 + P2 + P3
    labels = np.argmax(total, axis=1)
    labels = np.where(a2 == a3, a2, labels)
    labels = np.where((a1 == a2) | (a1 == a3), a1, labels)
    return labels, total / 3.0


def vote_proba(net: Net, X, vote: Vote = Vote.MAJORITY) -> tuple[np.ndarray, np.ndarray]:
    """(labels, probs) of the final prediction rule."""
    if isinstance(net, MlpNet):
        P = predict_proba(net, X)
        return np.argmax(P, axis=1), P
    if Vote(vote) is Vote.HEAD3:
        P = predict_proba(net, X, 3)
        return np.argmax(P, axis=1), P
    return majority_vote_probs(*predict_proba_heads(net, X))


# -- loss and gradients -------------------------------------------------------


def orth_loss(W_a: np.ndarray, W_b: np.ndarray) -> float:
    """Squared Frobenius norm of ``W_a^T W_b``."""
    W_a = np.asarray(W_a, dtype=np.float64)
    W_b = np.asarray(W_b, dtype=np.float64)
    if W_a.shape != W_b.shape:
        raise ValueError(f"shape mismatch {W_a.shape} vs {W_b.shape}")
    M = W_a.T @ W_b
    return float(np.sum(M * M))


def _as_batch(b):
    if b is None:
        return None
    if isinstance(b, Dataset):
        if not b.is_labeled:
            raise ValueError("training batches must be labeled")
        b = (b.X, b.y)
    X, y = b
    if X.shape[0] == 0:
        return None
    return X, np.asarray(y, dtype=np.int64)


def _normalize_batches(net: Net, batches) -> list:
    if isinstance(net, MlpNet):
        if isinstance(batches, (list,)) and len(batches) == 1:
            batches = batches[0]
        out = [_as_batch(batches)]
    else:
        if len(batches) != N_HEADS:
            raise ValueError("MultiHeadNet needs one batch per head")
        out = [_as_batch(b) for b in batches]
    if all(b is None for b in out):
        raise ValueError("all batches are empty")
    return out


def _accumulate(net: Net, batches: list, gamma: float, grads: dict[str, np.ndarray]) -> float:
    """Add the loss gradient into the zeroed ``grads`` arrays; return the loss."""
    params = net.params()
    W_in, b_in = net.W_in, net.b_in
    gW_in, gb_in = grads["W_in"], grads["b_in"]
    total = 0.0
    for (wk, bk), batch in zip(_head_keys(net), batches):
        if batch is None:
            continue
        X, y = batch
        n = X.shape[0]
        rows = np.arange(n)
        W = params[wk]
        H = X @ W_in
        H += b_in
        expit(H, out=H)
        logits = H @ W
        logits += params[bk]
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits, out=logits)
        norm = e.sum(axis=1)
        d_logits = e
        d_logits /= norm[:, None]
        p_true = d_logits[rows, y]
        total -= np.log(p_true).sum() / n
        d_logits[rows, y] = p_true - 1.0
        d_logits /= n
        grads[wk] += H.T @ d_logits
        grads[bk] += d_logits.sum(axis=0)
        dZ = d_logits @ W.T
        dZ *= H
        dZ *= 1.0 - H
        gW_in += X.T @ dZ
        gb_in += dZ.sum(axis=0)
    if isinstance(net, MultiHeadNet) and gamma:
        W1, W2 = net.W_heads[0], net.W_heads[1]
        M = W1.T @ W2
        total += gamma * float(np.sum(M * M))
        grads["W_1"] += 2.0 * gamma * W2 @ M.T
        grads["W_2"] += 2.0 * gamma * W1 @ M
    return float(total)


def loss_and_gradients(net: Net, batches, gamma: float = 0.0) -> tuple[float, dict[str, np.ndarray]]:
    batches = _normalize_batches(net, batches)
    for b in batches:
        if b is not None:
            _check_dim(net, b[0])
    grads = {k: np.zeros_like(v) for k, v in net.params().items()}
    value = _accumulate(net, batches, gamma, grads)
    return value, grads


def loss(net: Net, batches, gamma: float = 0.0) -> float:
    """Sum of per-head mean cross-entropy plus the weighted orthogonality term.

    An empty head batch contributes nothing; at least one must be nonempty.
    """
    batches = _normalize_batches(net, batches)
    total = 0.0
    for head, batch in enumerate(batches, 1):
        if batch is None:
            continue
        X, y = batch
        P = predict_proba(net, X, None if isinstance(net, MlpNet) else head)
        total += -np.mean(np.log(P[np.arange(len(y)), y]))
    if isinstance(net, MultiHeadNet):
        total += gamma * orth_loss(net.W_heads[0], net.W_heads[1])
    return float(total)


def gradients(net: Net, batches, gamma: float = 0.0) -> dict[str, np.ndarray]:
    return loss_and_gradients(net, batches, gamma)[1]


# -- optimization -------------------------------------------------------------


class Adam:
    """Adaptive-moment updates applied in place to a parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class EarlyStopping:
    """Tracks the best score seen and counts epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = None
        self.best_epoch = 0
        self.best_params: dict[str, np.ndarray] | None = None
        self.wait = 0

    def update(self, epoch: int, score, net: Net) -> bool:
        """Record ``score`` for ``epoch``; return True when training should stop."""
        if self.best is None or score > self.best:
            self.best = score
            self.best_epoch = epoch
            self.best_params = {k: v.copy() for k, v in net.params().items()}
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience

    def restore(self, net: Net) -> None:
        if self.best_params is not None:
            for k, v in net.params().items():
                v[...] = self.best_params[k]


def _flat_views(net: Net) -> tuple[np.ndarray, Net, dict[str, np.ndarray], np.ndarray]:
    """Copy ``net`` into one contiguous buffer.

    Returns (theta, net whose arrays are views of theta, gradient views,
    flat gradient buffer).
    """
    params = net.params()
    sizes = [p.size for p in params.values()]
    theta = np.concatenate([p.ravel() for p in params.values()])
    grad = np.zeros_like(theta)
    offs = np.cumsum([0] + sizes)
    views = {}
    gviews = {}
    for (k, p), a, b in zip(params.items(), offs[:-1], offs[1:]):
        views[k] = theta[a:b].reshape(p.shape)
        gviews[k] = grad[a:b].reshape(p.shape)
    if isinstance(net, MlpNet):
        bound = MlpNet(views["W_in"], views["b_in"], views["W_out"], views["b_out"])
    else:
        bound = MultiHeadNet(views["W_in"], views["b_in"],
                             [views[f"W_{i}"] for i in range(1, N_HEADS + 1)],
                             [views[f"b_{i}"] for i in range(1, N_HEADS + 1)])
    return theta, bound, gviews, grad


def _design(X):
    # small feature spaces are cheaper to slice densely
    if sp.issparse(X) and X.shape[1] <= 512:
        return X.toarray()
    return X


def dev_score(net: Net, dev: Dataset, vote: Vote = Vote.MAJORITY) -> tuple[float, float]:
    """(accuracy, negative mean log-likelihood) of the final prediction rule on ``dev``."""
    labels, P = vote_proba(net, _design(dev.X), vote)
    acc = float(np.mean(labels == dev.y))
    nll = float(-np.mean(np.log(np.maximum(P[np.arange(len(dev)), dev.y], 1e-300))))
    return acc, -nll


def train(
    net: Net,
    data,
    dev: Dataset,
    cfg: TrainConfig,
    vote: Vote = Vote.MAJORITY,
    scorer: Callable[[Net], object] | None = None,
) -> tuple[Net, int]:
    """Minibatch Adam with early stopping on ``dev``; returns (best net, epochs run).

    ``data`` is a Dataset for an MlpNet or a three-element sequence of
    Datasets (``None`` or empty allowed per head) for a MultiHeadNet. The
    default ``scorer`` ranks epochs by dev accuracy and breaks ties by dev
    log-likelihood.
    """
    if not dev.is_labeled or len(dev) == 0:
        raise ValueError("dev set must be labeled and nonempty")
    multi = isinstance(net, MultiHeadNet)
    parts = list(data) if multi else [data]
    if len(parts) != (N_HEADS if multi else 1):
        raise ValueError("need one training set per head")
    arrays = []
    for ds in parts:
        if ds is None or len(ds) == 0:
            arrays.append(None)
            continue
        if not ds.is_labeled:
            raise ValueError("training data must be labeled")
        if ds.dimensionality != net.input_dim:
            raise ValueError(f"training data has dimension {ds.dimensionality}, net expects {net.input_dim}")
        arrays.append((_design(ds.X), ds.y))
    if all(a is None for a in arrays):
        raise ValueError("training data is empty")
    theta, net, gviews, gflat = _flat_views(net)
    gamma = cfg.gamma if multi else 0.0
    if scorer is None:
        scorer = lambda n: dev_score(n, dev, vote)  # noqa: E731
    opt = Adam({"theta": theta}, lr=cfg.learning_rate)
    stopper = EarlyStopping(cfg.patience)
    bs = cfg.batch_size
    sizes = [0 if a is None else len(a[1]) for a in arrays]
    n_batches = [math.ceil(n / bs) for n in sizes]
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        # equal-size heads get equal permutations, so identical heads stay identical
        perms = [np.random.default_rng([cfg.seed, epoch]).permutation(n) for n in sizes]
        for step in range(max(n_batches)):
            batches = []
            for a, perm, nb in zip(arrays, perms, n_batches):
                if step >= nb:
                    batches.append(None)
                    continue
                idx = perm[step * bs:(step + 1) * bs]
                batches.append((a[0][idx], a[1][idx]))
            gflat[:] = 0.0
            value = _accumulate(net, batches, gamma, gviews)
            if not math.isfinite(value):
                raise DivergenceError(epoch)
            opt.step({"theta": gflat})
        if not all_finite(net):
            raise DivergenceError(epoch)
        if stopper.update(epoch, scorer(net), net):
            break
    stopper.restore(net)
    return net.copy(), epoch


# -- checkpoints --------------------------------------------------------------

_MAGIC = b"TRIN"
_HEADER = struct.Struct("<4sI4q")


def dumps_checkpoint(net: Net) -> bytes:
    """Header (magic, version, input, hidden, classes, heads) then row-major float64."""
    heads = net.heads()
    header = _HEADER.pack(_MAGIC, 1, net.input_dim, net.hidden_dim, net.num_classes, len(heads))
    arrays = [net.W_in, net.b_in] + [a for wb in heads for a in wb]
    return header + b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def loads_checkpoint(blob: bytes) -> Net:
    if len(blob) < _HEADER.size:
        raise ValueError("truncated checkpoint")
    magic, version, d, h, c, k = _HEADER.unpack_from(blob)
    if magic != _MAGIC or version != 1:
        raise ValueError("not a checkpoint file")
    if k not in (1, N_HEADS):
        raise ValueError(f"unsupported head count {k}")
    shapes = [(d, h), (h,)] + [(h, c), (c,)] * k
    need = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(blob) != need:
        raise ValueError(f"checkpoint has {len(blob)} bytes, expected {need}")
    off = _HEADER.size
    arrays = []
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(s).astype(np.float64))
        off += 8 * n
    if k == 1:
        return MlpNet(*arrays)
    return MultiHeadNet(arrays[0], arrays[1], arrays[2::2], arrays[3::2])


def save_checkpoint(net: Net, path) -> None:
    write_atomic(path, dumps_checkpoint(net))


def load_checkpoint(path) -> Net:
    return loads_checkpoint(Path(path).read_bytes())
