from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from tritrain.data import Dataset
from tritrain.model import (MlpNet, MultiHeadNet, Prediction, TrainConfig, Vote, predict_proba,
                            predict_proba_heads)
from tritrain.ssl import (
    Fixed,
    LinearGrowth,
    NoPseudoLabelsError,
    SslConfig,
    agree_pseudo_labels,
    asym_tri_train,
    dumps_result,
    loads_result_records,
    majority_vote,
    mt_tri_train,
    run_strategy,
    sample_candidates,
    select_confident,
    select_top_n,
    self_train_threshold,
    self_train_throttled,
    src_only,
    tri_train,
)
from tritrain.ssl import _joint_init, _sub

FAST = TrainConfig(max_epochs=15, patience=3, learning_rate=0.01)
STRONG = TrainConfig(max_epochs=30, patience=5, learning_rate=0.05)


def cfg(**kw):
    kw.setdefault("train_cfg", FAST)
    kw.setdefault("hidden_dim", 8)
    return SslConfig(**kw)


# -- brute-force oracles ------------------------------------------------------


def oracle_agree(pj, pk, cands, exclude=(), tau=None, pi=None):
    out = []
    for r, c in enumerate(cands):
        lj = max(range(len(pj[r])), key=lambda k: (pj[r][k], -k))
        lk = max(range(len(pk[r])), key=lambda k: (pk[r][k], -k))
        if lj != lk or c in exclude:
            continue
        if tau is not None and not (max(pj[r]) > tau or max(pk[r]) > tau):
            continue
        if pi is not None and max(range(len(pi[r])), key=lambda k: (pi[r][k], -k)) == lj:
            continue
        out.append((int(c), lj))
    return out


def oracle_top_n(conf, n):
    return sorted(range(len(conf)), key=lambda i: (-conf[i], i))[:n]


def oracle_vote(ps):
    labels = [max(range(len(p)), key=lambda k: (p[k], -k)) for p in ps]
    for lab in labels:
        if labels.count(lab) >= 2:
            return lab
    total = [sum(p[k] for p in ps) for k in range(len(ps[0]))]
    return max(range(len(total)), key=lambda k: (total[k], -k))


def random_probs(rng, n, c):
    P = rng.dirichlet(np.ones(c), size=n)
    return P


# -- nets with chosen outputs -------------------------------------------------


def lookup_net(logits, pad_classes=2):
    """MLP over one-hot inputs whose output logits on row i are ``logits[i]``."""
    logits = np.asarray(logits, dtype=float)
    n = len(logits)
    W_in = np.eye(n) * 40.0
    b_in = np.full(n, -20.0)  # hidden ~ one-hot of the input row
    return MlpNet(W_in, b_in, logits, np.zeros(logits.shape[1]))


def one_hot_dataset(n, labels=None):
    X = sp.csr_matrix(np.eye(n))
    return Dataset(X, None if labels is None else np.asarray(labels), 2)


# -- candidates ---------------------------------------------------------------


class TestSampleCandidates:
    def test_fixed_clamps(self):
        np.testing.assert_array_equal(sample_candidates(2000, 1, Fixed(10000), 0), np.arange(2000))

    def test_linear_growth(self):
        c = sample_candidates(10000, 3, LinearGrowth(1000, 1000), 0)
        assert len(c) == 3000 and len(set(c.tolist())) == 3000

    def test_deterministic_and_epoch_dependent(self):
        a = sample_candidates(500, 2, Fixed(50), 7)
        np.testing.assert_array_equal(a, sample_candidates(500, 2, Fixed(50), 7))
        assert not np.array_equal(a, sample_candidates(500, 3, Fixed(50), 7))

    def test_bad_epoch(self):
        with pytest.raises(ValueError):
            sample_candidates(10, 0, Fixed(), 0)


# -- selection ----------------------------------------------------------------


class TestSelection:
    def test_top_n_example(self):
        P = np.array([[0.9, 0.1], [0.3, 0.7], [0.2, 0.8]])
        assert set(select_top_n(P, 2).tolist()) == {0, 2}

    def test_threshold_strict(self):
        P = np.array([[0.9, 0.1], [0.95, 0.05]])
        np.testing.assert_array_equal(select_confident(P, 0.9), [1])

    def test_agree_all(self):
        rng = np.random.default_rng(0)
        P = random_probs(rng, 6, 3)
        b = agree_pseudo_labels(P, P, np.arange(10, 16))
        np.testing.assert_array_equal(b.indices, np.arange(10, 16))
        np.testing.assert_array_equal(b.labels, P.argmax(1))

    def test_agree_disjoint(self):
        A = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert len(agree_pseudo_labels(A, A[:, ::-1])) == 0

    def test_agree_hand_tables(self):
        pj = np.array([[0.95, 0.05], [0.6, 0.4], [0.3, 0.7], [0.92, 0.08]])
        pk = np.array([[0.7, 0.3], [0.55, 0.45], [0.05, 0.95], [0.1, 0.9]])
        pi = np.array([[0.6, 0.4], [0.2, 0.8], [0.8, 0.2], [0.5, 0.5]])
        b = agree_pseudo_labels(pj, pk, tau=0.9, disagree_i=pi)
        # row0 agrees but model i agrees too; row1 under tau; row2 qualifies; row3 disagrees
        assert [(i, y) for i, y, _ in b.items] == [(2, 1)]
        assert b.items[0][2] == pytest.approx((0.7 + 0.95) / 2)

    def test_misaligned(self):
        with pytest.raises(ValueError):
            agree_pseudo_labels(np.ones((3, 2)) / 2, np.ones((2, 2)) / 2)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(0, 50), c=st.integers(2, 3),
           use_tau=st.booleans(), use_dis=st.booleans())
    def test_agree_matches_enumeration(self, seed, n, c, use_tau, use_dis):
        rng = np.random.default_rng(seed)
        pj, pk, pi = (random_probs(rng, n, c) for _ in range(3))
        cands = np.sort(rng.choice(200, size=n, replace=False))
        exclude = set(rng.choice(200, size=5).tolist())
        tau = 0.6 if use_tau else None
        b = agree_pseudo_labels(pj, pk, cands, exclude, tau, pi if use_dis else None)
        assert [(i, y) for i, y, _ in b.items] == oracle_agree(
            pj.tolist(), pk.tolist(), cands.tolist(), exclude, tau, pi.tolist() if use_dis else None)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(1, 50))
    def test_tau_subset_and_monotone(self, seed, n):
        rng = np.random.default_rng(seed)
        pj, pk = random_probs(rng, n, 2), random_probs(rng, n, 2)
        full = agree_pseudo_labels(pj, pk).key()
        lo = agree_pseudo_labels(pj, pk, tau=0.6).key()
        hi = agree_pseudo_labels(pj, pk, tau=0.8).key()
        assert hi <= lo <= full

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(0, 50), k=st.integers(1, 60))
    def test_top_n_matches_sort(self, seed, n, k):
        rng = np.random.default_rng(seed)
        # coarse values force ties so the index tie-break is exercised
        conf = rng.integers(5, 10, n) / 10
        P = np.stack([conf, 1 - conf], axis=1)
        assert select_top_n(P, k).tolist() == oracle_top_n(conf.tolist(), k)


class TestMajorityVote:
    def test_two_of_three(self):
        a, b = Prediction(np.array([0.8, 0.2])), Prediction(np.array([0.1, 0.9]))
        assert majority_vote([a, a, b]).predicted == 0

    def test_unanimous_mean(self):
        ps = [Prediction(np.array(p)) for p in ([0.6, 0.4], [0.9, 0.1], [0.7, 0.3])]
        out = majority_vote(ps)
        assert out.predicted == 0
        np.testing.assert_allclose(out.probs, [0.733333333, 0.266666667], atol=1e-8)

    def test_three_way_split(self):
        ps = [Prediction(np.array(p)) for p in
              ([0.5, 0.45, 0.05], [0.05, 0.55, 0.4], [0.3, 0.3, 0.4])]
        assert majority_vote(ps).predicted == 1
        assert oracle_vote([p.probs.tolist() for p in ps]) == 1

    def test_needs_three(self):
        with pytest.raises(ValueError):
            majority_vote([Prediction(np.array([1.0, 0.0]))] * 2)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**31), c=st.integers(2, 4))
    def test_matches_enumeration(self, seed, c):
        rng = np.random.default_rng(seed)
        ps = [Prediction(p) for p in random_probs(rng, 3, c)]
        assert majority_vote(ps).predicted == oracle_vote([p.probs.tolist() for p in ps])


# -- self-training ------------------------------------------------------------


def handset_task():
    # pool of three one-hot rows whose top probabilities are 0.95, 0.80, 0.60
    logit = lambda p: np.log(p / (1 - p))  # noqa: E731
    net = lookup_net([[logit(0.95), 0], [logit(0.80), 0], [logit(0.60), 0]])
    X = sp.csr_matrix(np.eye(3))
    L = Dataset(X, np.array([0, 0, 1]), 2)
    U = Dataset(X, None, 2)
    return net, L, U


class TestSelfTraining:
    def test_handset_threshold(self):
        net, L, U = handset_task()
        np.testing.assert_allclose(predict_proba(net, U.X).max(1), [0.95, 0.80, 0.60], atol=1e-6)
        res = self_train_threshold(L, U, L, cfg(tau=0.9, outer_epochs=1), initial=net)
        assert res.batches[0][0].indices.tolist() == [0]

    def test_tau_one_equals_source_only(self, small_task):
        L, U, dev, test = small_task
        c = cfg(tau=1.0, seed=3)
        a, b = self_train_threshold(L, U, dev, c), src_only(L, U, dev, c)
        assert a.total_pseudo == 0 and a.epochs == 0
        np.testing.assert_array_equal(a.predictor.predict_proba(test)[1], b.predictor.predict_proba(test)[1])

    def test_tau_zero_takes_all(self, small_task):
        L, U, dev, _ = small_task
        res = self_train_threshold(L, U, dev, cfg(tau=0.0))
        assert res.pseudo_counts == [(len(U),)]

    @pytest.mark.parametrize("n", [1, 25, 50, 500])
    def test_throttled_counts(self, small_task, n):
        L, U, dev, _ = small_task
        res = self_train_throttled(L, U, dev, cfg(throttle_n=n, outer_epochs=4))
        remaining = len(U)
        for (k,) in res.pseudo_counts:
            assert k == min(n, remaining)
            remaining -= k
        assert len(res.pseudo_counts) == min(4, -(-len(U) // n))


# -- tri-training -------------------------------------------------------------


class TestTriTraining:
    def test_empty_pool(self, small_task):
        L, U, dev, test = small_task
        res = tri_train(L, U.subset([]), dev, cfg())
        assert res.epochs == 0 and len(res.predictor.nets) == 3

    def test_identical_models_full_agreement(self, small_task):
        L, U, dev, _ = small_task
        net = src_only(L, U, dev, cfg()).predictor.nets[0]
        res = tri_train(L, U, dev, cfg(outer_epochs=1), initial=[net, net, net])
        for b in res.batches[0]:
            np.testing.assert_array_equal(b.indices, np.arange(len(U)))

    @pytest.mark.parametrize("disagreement", [False, True])
    def test_oracle_replay(self, small_task, disagreement):
        L, U, dev, _ = small_task
        c = cfg(pool_scheme=Fixed(80), outer_epochs=3, seed=1)
        full = tri_train(L, U, dev, c, disagreement=disagreement)
        total = 0
        for e in range(1, full.epochs + 1):
            # an empty pool returns the untouched bootstrap-trained models
            before = tri_train(L, U if e > 1 else U.subset([]), dev,
                               replace(c, outer_epochs=max(1, e - 1)), disagreement=disagreement)
            cand = sample_candidates(U, e, c.pool_scheme, _seed_tag(c.seed))
            P = [predict_proba(m, U.X[cand]).tolist() for m in before.predictor.nets]
            for i in range(3):
                j, k = [x for x in range(3) if x != i]
                want = oracle_agree(P[j], P[k], cand.tolist(), pi=P[i] if disagreement else None)
                got = [(a, y) for a, y, _ in full.batches[e - 1][i].items]
                assert got == want
                total += len(want)
        assert full.total_pseudo == total

    def test_deterministic(self, small_task):
        L, U, dev, test = small_task
        a = tri_train(L, U, dev, cfg(outer_epochs=2))
        b = tri_train(L, U, dev, cfg(outer_epochs=2))
        assert a.pseudo_counts == b.pseudo_counts
        np.testing.assert_array_equal(a.predictor.predict(test), b.predictor.predict(test))


def _seed_tag(seed):
    return _sub(seed, 4)


# -- asymmetric and multi-task tri-training -----------------------------------


class TestAsym:
    def test_never_agreeing_heads(self, small_task):
        L, U, dev, _ = small_task
        d, h = L.dimensionality, 4
        net = MultiHeadNet(np.zeros((d, h)), np.zeros(h), [np.zeros((h, 2)) for _ in range(3)],
                           [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.zeros(2)])
        with pytest.raises(NoPseudoLabelsError, match="no pseudo-labels for target head") as info:
            asym_tri_train(L, U, dev, cfg(), initial=net)
        assert info.value.epoch == 1

    def test_oracle_replay(self, small_task):
        L, U, dev, _ = small_task
        c = cfg(outer_epochs=3, tau=0.7, seed=2)
        full = asym_tri_train(L, U, dev, c)
        total = 0
        for e in range(1, full.epochs + 1):
            net = (asym_tri_train(L, U, dev, replace(c, outer_epochs=e - 1)).predictor.nets[0]
                   if e > 1 else _joint_init(L, dev, c, Vote.HEAD3))
            cand = sample_candidates(U, e, c.pool_scheme, _seed_tag(c.seed))
            P1, P2, _ = predict_proba_heads(net, U.X[cand])
            want = oracle_agree(P1.tolist(), P2.tolist(), cand.tolist(), tau=0.7)
            assert [(a, y) for a, y, _ in full.batches[e - 1][0].items] == want
            total += len(want)
        assert full.total_pseudo == total


class TestMtTri:
    def test_oracle_replay(self, small_task):
        L, U, dev, _ = small_task
        c = cfg(outer_epochs=3, seed=4, train_cfg=STRONG)
        full = mt_tri_train(L, U, dev, c)
        assert full.epochs >= 1
        for e in range(1, full.epochs + 1):
            net = mt_tri_train(L, U if e > 1 else U.subset([]), dev,
                               replace(c, outer_epochs=max(1, e - 1))).predictor.nets[0]
            cand = sample_candidates(U, e, c.pool_scheme, _seed_tag(c.seed))
            P = [p.tolist() for p in predict_proba_heads(net, U.X[cand])]
            for i in range(3):
                j, k = [x for x in range(3) if x != i]
                want = oracle_agree(P[j], P[k], cand.tolist(), tau=0.9)
                assert [(a, y) for a, y, _ in full.batches[e - 1][i].items] == want
                for _, _, conf_ in full.batches[e - 1][i].items:
                    assert 0.0 <= conf_ <= 1.0

    def test_default_tau(self):
        assert SslConfig().tau == 0.9

    def test_identical_heads_one_and_two_stay_equal(self, small_task):
        L, U, dev, _ = small_task
        c = cfg(outer_epochs=3, train_cfg=replace(STRONG, gamma=0.0))
        res = mt_tri_train(L, U, dev, c, identical_heads=True)
        assert res.head_predictions
        net = res.predictor.nets[0]
        np.testing.assert_array_equal(net.W_heads[0], net.W_heads[1])
        for preds in res.head_predictions:
            np.testing.assert_array_equal(preds[0], preds[1])

    def test_empty_head3_is_skipped(self, small_task):
        L, U, dev, _ = small_task
        d, h = L.dimensionality, 4
        # head 1 and head 2 argmax-disjoint, so head 3 never gets pseudo-labels
        net = MultiHeadNet(np.zeros((d, h)), np.zeros(h), [np.zeros((h, 2)) for _ in range(3)],
                           [np.array([5.0, 0.0]), np.array([0.0, 5.0]), np.array([5.0, 0.0])])
        res = mt_tri_train(L, U, dev, cfg(outer_epochs=1), initial=net)
        assert res.skipped_head3 == [1]
        assert res.pseudo_counts[0][2] == 0


# -- running and persistence --------------------------------------------------


class TestRunStrategy:
    @pytest.mark.parametrize("name", ["src_only", "self_threshold", "self_throttled", "tri", "tri_d", "mt_tri"])
    def test_every_strategy_runs(self, small_task, name):
        L, U, dev, test = small_task
        res = run_strategy(name, L, U, dev, cfg(outer_epochs=2))
        assert res.strategy == name
        assert res.predictor.predict(test).shape == (len(test),)

    def test_unknown(self, small_task):
        L, U, dev, _ = small_task
        with pytest.raises(ValueError, match="unknown strategy"):
            run_strategy("co_training", L, U, dev, cfg())

    def test_result_records(self, small_task):
        L, U, dev, test = small_task
        c = cfg(outer_epochs=2)
        res = tri_train(L, U, dev, c)
        epochs, summary = loads_result_records(dumps_result(res, c, 0.5))
        assert summary["mu_pseudo"] == res.total_pseudo
        assert sum(sum(e["pseudo_counts"]) for e in epochs) == res.total_pseudo
        assert summary["config"]["train_cfg"]["max_epochs"] == 15
