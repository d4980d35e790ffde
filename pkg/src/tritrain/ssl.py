"""Bootstrapping strategies over labeled data ``L`` and an unlabeled pool ``U``.

Strategies: source-only training, self-training with an absolute
confidence threshold, throttled self-training (top-n per iteration),
tri-training and tri-training with disagreement over three bootstrap-trained
MLPs, asymmetric tri-training, and multi-task tri-training over one shared
encoder with three heads.

Every run is a pure function of its inputs and ``SslConfig.seed``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import Dataset, bootstrap_sample, concat
from .model import (
    MlpNet,
    MultiHeadNet,
    Prediction,
    TrainConfig,
    Vote,
    _design,
    init_mlp,
    init_multihead,
    majority_vote_probs,
    predict_proba,
    predict_proba_heads,
    train,
    vote_proba,
)

STRATEGIES = ("src_only", "self_threshold", "self_throttled", "tri", "tri_d", "asym", "mt_tri")


class SslError(RuntimeError):
    pass


class NoPseudoLabelsError(SslError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"no pseudo-labels for target head in epoch {epoch}")


@dataclass(frozen=True)
class Fixed:
    size: int = 10000


@dataclass(frozen=True)
class LinearGrowth:
    base: int = 1000
    rate: int = 1000


@dataclass(frozen=True)
class SslConfig:
    tau: float = 0.9
    throttle_n: int = 800
    outer_epochs: int = 10
    pool_scheme: Fixed | LinearGrowth = Fixed()
    vote: Vote = Vote.MAJORITY
    seed: int = 0
    train_cfg: TrainConfig = TrainConfig()
    hidden_dim: int = 50

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.throttle_n < 1 or self.outer_epochs < 1:
            raise ValueError("throttle_n and outer_epochs must be >= 1")
        object.__setattr__(self, "vote", Vote(self.vote))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vote"] = self.vote.value
        scheme = self.pool_scheme
        d["pool_scheme"] = {"kind": type(scheme).__name__, **asdict(scheme)}
        return d


@dataclass(frozen=True, eq=False)
class PseudoLabelBatch:
    """Pool indices with their agreed labels and confidences."""

    indices: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("pool indices must be unique")
        c = self.confidences
        if len(c) and (c.min() < 0 or c.max() > 1):
            raise ValueError("confidences must lie in [0, 1]")

    @classmethod
    def empty(cls) -> "PseudoLabelBatch":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def items(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(y), float(c)) for i, y, c in
                zip(self.indices, self.labels, self.confidences)]

    def key(self) -> frozenset:
        return frozenset(zip(self.indices.tolist(), self.labels.tolist()))

    def to_dataset(self, U: Dataset) -> Dataset:
        return U.subset(self.indices).with_labels(self.labels)


class Predictor:
    """Final prediction rule of a run: one net, a vote over nets, or a multi-head net."""

    def __init__(self, nets: Sequence, vote: Vote = Vote.MAJORITY):
        self.nets = tuple(nets)
        self.vote = Vote(vote)
        if len(self.nets) not in (1, 3):
            raise ValueError("a predictor wraps one net or three nets")

    def predict_proba(self, X) -> tuple[np.ndarray, np.ndarray]:
        if isinstance(X, Dataset):
            X = _design(X.X)
        if len(self.nets) == 1:
            return vote_proba(self.nets[0], X, self.vote)
        return majority_vote_probs(*(predict_proba(n, X) for n in self.nets))

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X)[0]

    def accuracy(self, ds: Dataset) -> float:
        return float(np.mean(self.predict(ds) == ds.y))


@dataclass
class SslResult:
    strategy: str
    predictor: Predictor
    pseudo_counts: list[tuple[int, ...]] = field(default_factory=list)
    dev_accuracy: list[float] = field(default_factory=list)
    skipped_head3: list[int] = field(default_factory=list)
    # per executed epoch: (3, n_candidates) argmax labels at pseudo-labeling time
    head_predictions: list[np.ndarray] = field(default_factory=list, repr=False)
    batches: list[tuple[PseudoLabelBatch, ...]] = field(default_factory=list, repr=False)

    @property
    def epochs(self) -> int:
        return len(self.pseudo_counts)

    @property
    def total_pseudo(self) -> int:
        return int(sum(sum(c) for c in self.pseudo_counts))

    def _record(self, counts, dev: Dataset, batches=()):
        self.pseudo_counts.append(tuple(int(c) for c in counts))
        self.dev_accuracy.append(self.predictor.accuracy(dev))
        self.batches.append(tuple(batches))


# -- selection primitives -----------------------------------------------------


def sample_candidates(U, epoch: int, scheme: Fixed | LinearGrowth, seed: int) -> np.ndarray:
    """Sorted pool indices drawn uniformly without replacement for ``epoch``."""
    n = U if isinstance(U, int) else len(U)
    if epoch < 1:
        raise ValueError("epoch must be >= 1")
    if isinstance(scheme, Fixed):
        k = scheme.size
    elif isinstance(scheme, LinearGrowth):
        k = scheme.base + scheme.rate * (epoch - 1)
    else:
        raise TypeError(f"unknown pool scheme {scheme!r}")
    k = min(k, n)
    if k == n:
        return np.arange(n)
    rng = np.random.default_rng([seed, epoch])
    return np.sort(rng.choice(n, size=k, replace=False))


def select_confident(P: np.ndarray, tau: float) -> np.ndarray:
    """Rows whose top class probability strictly exceeds ``tau``."""
    return np.flatnonzero(P.max(axis=1) > tau)


def select_top_n(P: np.ndarray, n: int) -> np.ndarray:
    """The ``n`` most confident rows, confidence descending then index ascending."""
    conf = P.max(axis=1)
    order = np.lexsort((np.arange(len(conf)), -conf))
    return order[:n]


def agree_pseudo_labels(
    pred_j: np.ndarray,
    pred_k: np.ndarray,
    candidates: np.ndarray | None = None,
    exclude=(),
    tau: float | None = None,
    disagree_i: np.ndarray | None = None,
) -> PseudoLabelBatch:
    """Candidates on which models j and k agree, as pseudo-labels for model i.

    ``pred_*`` are probability rows aligned with ``candidates`` (pool
    indices; defaults to ``0..n-1``). With ``tau`` at least one of the two
    agreeing models must be more confident than ``tau``. With
    ``disagree_i`` model i must predict a different label.
    """
    pred_j = np.asarray(pred_j)
    pred_k = np.asarray(pred_k)
    if candidates is None:
        candidates = np.arange(len(pred_j))
    candidates = np.asarray(candidates, dtype=np.int64)
    aligned = [pred_j, pred_k] + ([np.asarray(disagree_i)] if disagree_i is not None else [])
    if any(p.shape != pred_j.shape for p in aligned) or len(pred_j) != len(candidates):
        raise ValueError("prediction lists are not aligned over the candidates")
    yj, yk = pred_j.argmax(axis=1), pred_k.argmax(axis=1)
    cj, ck = pred_j.max(axis=1), pred_k.max(axis=1)
    mask = yj == yk
    if tau is not None:
        mask &= np.maximum(cj, ck) > tau
    if disagree_i is not None:
        mask &= np.asarray(disagree_i).argmax(axis=1) != yj
    if len(exclude):
        mask &= ~np.isin(candidates, np.asarray(list(exclude), dtype=np.int64))
    return PseudoLabelBatch(candidates[mask], yj[mask], (cj[mask] + ck[mask]) / 2.0)


def majority_vote(preds: Sequence[Prediction]) -> Prediction:
    if len(preds) != 3:
        raise ValueError("majority vote needs exactly three predictions")
    P = [np.atleast_2d(p.probs) for p in preds]
    labels, mean = majority_vote_probs(*P)
    out = Prediction(mean[0])
    object.__setattr__(out, "predicted", int(labels[0]))
    return out


# -- strategies ---------------------------------------------------------------


def _sub(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def _tc(cfg: SslConfig, *tags: int) -> TrainConfig:
    return replace(cfg.train_cfg, seed=_sub(cfg.seed, *tags))


def _check_inputs(L: Dataset, U: Dataset, dev: Dataset) -> None:
    if not L.is_labeled or len(L) == 0:
        raise ValueError("L must be a nonempty labeled dataset")
    if U.is_labeled and len(U):
        raise ValueError("U must be unlabeled")
    if U.dimensionality != L.dimensionality:
        raise ValueError("L and U differ in dimensionality")


def _with_pseudo(L: Dataset, U: Dataset, batch: PseudoLabelBatch) -> Dataset:
    return concat([L, batch.to_dataset(U)]) if len(batch) else L


def train_source(L: Dataset, dev: Dataset, cfg: SslConfig) -> MlpNet:
    """Source-only model; also the starting point of both self-training variants."""
    tc = _tc(cfg, 0)
    net, _ = train(init_mlp(L.dimensionality, L.num_classes, tc, cfg.hidden_dim), L, dev, tc)
    return net


def src_only(L: Dataset, U: Dataset, dev: Dataset, cfg: SslConfig) -> SslResult:
    _check_inputs(L, U, dev)
    return SslResult("src_only", Predictor([train_source(L, dev, cfg)]))


def _self_train(name, select, L, U, dev, cfg, initial):
    _check_inputs(L, U, dev)
    net = initial if initial is not None else train_source(L, dev, cfg)
    result = SslResult(name, Predictor([net]))
    XU = _design(U.X)
    remaining = np.arange(len(U))
    taken_idx: list[np.ndarray] = []
    taken_lab: list[np.ndarray] = []
    for epoch in range(1, cfg.outer_epochs + 1):
        if len(remaining) == 0:
            break
        P = predict_proba(net, XU[remaining])
        chosen = select(P)
        if len(chosen) == 0:
            break
        taken_idx.append(remaining[chosen])
        taken_lab.append(P[chosen].argmax(axis=1))
        batch = PseudoLabelBatch(remaining[chosen], P[chosen].argmax(axis=1), P[chosen].max(axis=1))
        remaining = np.delete(remaining, chosen)
        pool = PseudoLabelBatch(np.concatenate(taken_idx), np.concatenate(taken_lab),
                                np.ones(sum(map(len, taken_idx))))
        net, _ = train(net, _with_pseudo(L, U, pool), dev, _tc(cfg, 1, epoch))
        result.predictor = Predictor([net])
        result._record([len(batch)], dev, [batch])
    return result


def self_train_threshold(L, U, dev, cfg: SslConfig, initial: MlpNet | None = None) -> SslResult:
    """Move every pool example whose top probability exceeds ``tau`` into L.

    Starts from a model trained to convergence on L (or ``initial``) and
    continues training it on the grown labeled pool each iteration; stops
    when an iteration adds nothing or after ``outer_epochs`` iterations.
    """
    return _self_train("self_threshold", lambda P: select_confident(P, cfg.tau),
                       L, U, dev, cfg, initial)


def self_train_throttled(L, U, dev, cfg: SslConfig, initial: MlpNet | None = None) -> SslResult:
    """Move the ``throttle_n`` most confident pool examples into L per iteration."""
    return _self_train("self_throttled", lambda P: select_top_n(P, cfg.throttle_n),
                       L, U, dev, cfg, initial)


def _unchanged(batches, prev) -> bool:
    return prev is not None and all(b.key() == p for b, p in zip(batches, prev))


def tri_train(
    L: Dataset,
    U: Dataset,
    dev: Dataset,
    cfg: SslConfig,
    disagreement: bool = False,
    threshold: bool = False,
    initial: Sequence[MlpNet] | None = None,
) -> SslResult:
    """Classic tri-training; ``disagreement`` gives tri-training with disagreement.

    Each model starts from its own bootstrap sample of L. Per outer epoch,
    pseudo-labels for model i come from agreement of the other two on the
    sampled candidates; every model is then retrained from a fresh
    initialization on L plus its pseudo-labels. Stops once all three
    pseudo-label sets repeat the previous epoch's.
    """
    _check_inputs(L, U, dev)
    name = "tri_d" if disagreement else "tri"
    if initial is None:
        models = []
        for i in range(3):
            tc = _tc(cfg, 2, i)
            boot = bootstrap_sample(L, _sub(cfg.seed, 3, i))
            net, _ = train(init_mlp(L.dimensionality, L.num_classes, tc, cfg.hidden_dim),
                           boot, dev, tc)
            models.append(net)
    else:
        models = list(initial)
    result = SslResult(name, Predictor(models))
    XU = _design(U.X)
    prev = [frozenset()] * 3
    for epoch in range(1, cfg.outer_epochs + 1):
        if len(U) == 0:
            break
        cand = sample_candidates(U, epoch, cfg.pool_scheme, _sub(cfg.seed, 4))
        P = [predict_proba(m, XU[cand]) for m in models]
        batches = []
        for i in range(3):
            j, k = [x for x in range(3) if x != i]
            batches.append(agree_pseudo_labels(
                P[j], P[k], cand,
                tau=cfg.tau if threshold else None,
                disagree_i=P[i] if disagreement else None,
            ))
        if _unchanged(batches, prev):
            break
        prev = [b.key() for b in batches]
        new_models = []
        for i, b in enumerate(batches):
            tc = _tc(cfg, 5, epoch, i)
            net = init_mlp(L.dimensionality, L.num_classes, tc, cfg.hidden_dim)
            net, _ = train(net, _with_pseudo(L, U, b), dev, tc)
            new_models.append(net)
        models = new_models
        result.predictor = Predictor(models)
        result._record([len(b) for b in batches], dev, batches)
    return result


def _joint_init(L, dev, cfg, vote, identical_heads=False) -> MultiHeadNet:
    tc = _tc(cfg, 6)
    net = init_multihead(L.dimensionality, L.num_classes, tc, cfg.hidden_dim, identical_heads)
    net, _ = train(net, [L, L, L], dev, tc, vote=vote)
    return net


def asym_tri_train(
    L: Dataset,
    U: Dataset,
    dev: Dataset,
    cfg: SslConfig,
    initial: MultiHeadNet | None = None,
) -> SslResult:
    """Asymmetric tri-training: heads 1 and 2 label, head 3 alone predicts.

    Pseudo-labels come only from head 1 / head 2 agreement above ``tau``.
    Head 3 is trained on those pseudo-labels only, heads 1 and 2 on L plus
    them. Raises :class:`NoPseudoLabelsError` when the heads never agree.
    """
    _check_inputs(L, U, dev)
    vote = Vote.HEAD3
    net = initial.copy() if initial is not None else _joint_init(L, dev, cfg, vote)
    result = SslResult("asym", Predictor([net], vote))
    XU = _design(U.X)
    prev = None
    for epoch in range(1, cfg.outer_epochs + 1):
        cand = (sample_candidates(U, epoch, cfg.pool_scheme, _sub(cfg.seed, 4))
                if len(U) else np.zeros(0, np.int64))
        P1, P2, _ = predict_proba_heads(net, XU[cand])
        b3 = agree_pseudo_labels(P1, P2, cand, tau=cfg.tau)
        if len(b3) == 0:
            raise NoPseudoLabelsError(epoch)
        if _unchanged([b3], prev):
            break
        prev = [b3.key()]
        D3 = b3.to_dataset(U)
        LD3 = concat([L, D3])
        net, _ = train(net, [LD3, LD3, D3], dev, _tc(cfg, 7, epoch), vote=vote)
        result.predictor = Predictor([net], vote)
        result._record([len(b3)], dev, [b3])
    return result


def mt_tri_train(
    L: Dataset,
    U: Dataset,
    dev: Dataset,
    cfg: SslConfig,
    initial: MultiHeadNet | None = None,
    identical_heads: bool = False,
) -> SslResult:
    """Multi-task tri-training over a shared encoder with three heads.

    Joint training on L comes first, with the orthogonality penalty between
    heads 1 and 2 active throughout. Per outer epoch each head receives the
    ``tau``-thresholded agreements of the other two; head 3 trains on its
    pseudo-labels alone and skips the epoch when it has none. Final
    prediction is the majority vote of the three heads.
    """
    _check_inputs(L, U, dev)
    vote = Vote.MAJORITY
    net = (initial.copy() if initial is not None
           else _joint_init(L, dev, cfg, vote, identical_heads))
    result = SslResult("mt_tri", Predictor([net], vote))
    XU = _design(U.X)
    prev = [frozenset()] * 3
    for epoch in range(1, cfg.outer_epochs + 1):
        if len(U) == 0:
            break
        cand = sample_candidates(U, epoch, cfg.pool_scheme, _sub(cfg.seed, 4))
        P = predict_proba_heads(net, XU[cand])
        batches = []
        for i in range(3):
            j, k = [x for x in range(3) if x != i]
            batches.append(agree_pseudo_labels(P[j], P[k], cand, tau=cfg.tau))
        if _unchanged(batches, prev):
            break
        prev = [b.key() for b in batches]
        result.head_predictions.append(np.stack([p.argmax(axis=1) for p in P]))
        b1, b2, b3 = batches
        if len(b3) == 0:
            result.skipped_head3.append(epoch)
        data = [_with_pseudo(L, U, b1), _with_pseudo(L, U, b2),
                b3.to_dataset(U) if len(b3) else None]
        net, _ = train(net, data, dev, _tc(cfg, 8, epoch), vote=vote)
        result.predictor = Predictor([net], vote)
        result._record([len(b) for b in batches], dev, batches)
    return result


def run_strategy(strategy: str, L: Dataset, U: Dataset, dev: Dataset, cfg: SslConfig) -> SslResult:
    if strategy == "src_only":
        return src_only(L, U, dev, cfg)
    if strategy == "self_threshold":
        return self_train_threshold(L, U, dev, cfg)
    if strategy == "self_throttled":
        return self_train_throttled(L, U, dev, cfg)
    if strategy == "tri":
        return tri_train(L, U, dev, cfg)
    if strategy == "tri_d":
        return tri_train(L, U, dev, cfg, disagreement=True)
    if strategy == "asym":
        return asym_tri_train(L, U, dev, cfg)
    if strategy == "mt_tri":
        return mt_tri_train(L, U, dev, cfg)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")


# -- persistence --------------------------------------------------------------


def dumps_result(result: SslResult, cfg: SslConfig, final_accuracy: float | None = None) -> str:
    lines = []
    for e, (counts, acc) in enumerate(zip(result.pseudo_counts, result.dev_accuracy), 1):
        lines.append(json.dumps({
            "type": "epoch", "epoch": e, "pseudo_counts": list(counts),
            "dev_accuracy": round(acc, 6), "head3_skipped": e in result.skipped_head3,
        }))
    lines.append(json.dumps({
        "type": "summary",
        "strategy": result.strategy,
        "config": cfg.to_dict(),
        "epochs": result.epochs,
        "mu_pseudo": result.total_pseudo,
        "final_accuracy": None if final_accuracy is None else round(final_accuracy, 6),
    }, sort_keys=True))
    return "\n".join(lines) + "\n"


def loads_result_records(text: str) -> tuple[list[dict], dict]:
    """(epoch records, summary record) from a persisted result file."""
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not records or records[-1].get("type") != "summary":
        raise ValueError("result file lacks a summary record")
    return records[:-1], records[-1]
