import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gdn import autodiff as ad
from gdn.graph import CSR
from gdn.separation import (
    EXP_CAP,
    FeatureMask,
    Prototype,
    class_constraint,
    class_feature_distributions,
    gradient_scores,
    prototype_update,
    prototype_weights,
    sample_surrounding_pairs,
    select_top_k,
    separation_schedule,
    surrounding_constraint,
    total_loss,
)


def _kl(p, q):
    return sum(a * (math.log(a) - math.log(b)) for a, b in zip(p, q) if a > 0)


def _softmax(v):
    e = [math.exp(x) for x in v]
    s = sum(e)
    return [x / s for x in e]


def _linear_scores(x, w, b, labels, mode):
    """Scores from a tape: P = softmax(X W + b)."""
    tape = ad.Tape()
    xt = tape.var(x)
    probs = ad.softmax_rows(ad.add(ad.matmul(xt, w), b))
    return gradient_scores(tape, xt, probs, labels, np.arange(x.shape[0]), mode)


# ---------------------------------------------------------------- gradient scores


@pytest.mark.parametrize("mode", ["per_class", "pooled"])
def test_scores_follow_constructed_dependence(mode):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((10, 4))
    w = np.zeros((4, 2))
    w[0] = (-1.5, 1.5)  # classifier reads dim 0 only
    labels = np.array([0, 1] * 5)
    s = _linear_scores(x, w, np.zeros((1, 2)), labels, mode)
    assert s[0] > 0 and np.all(s[1:] == 0)


@pytest.mark.parametrize("mode", ["per_class", "pooled"])
def test_scores_unchanged_by_duplication(mode):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, 3))
    w, b = rng.standard_normal((3, 2)), rng.standard_normal((1, 2))
    labels = np.array([0, 1, 0, 0, 1, 1])
    a = _linear_scores(x, w, b, labels, mode)
    d = _linear_scores(np.vstack([x, x]), w, b, np.concatenate([labels, labels]), mode)
    np.testing.assert_allclose(a, d, rtol=1e-13)


@pytest.mark.parametrize("mode", ["per_class", "pooled"])
def test_scores_match_closed_form(mode):
    # d log softmax(xW+b)[y] / dx = W[:, y] - W @ p
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 4))
    w, b = rng.standard_normal((4, 2)), rng.standard_normal((1, 2))
    labels = np.array([1, 0, 0, 1, 0, 0])
    z = x @ w + b
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    g = np.stack([w[:, labels[n]] - w @ p[n] for n in range(6)])
    if mode == "pooled":
        expected = np.abs(g.sum(axis=0)) / 6
    else:
        expected = (np.abs(g[labels == 0].sum(axis=0)) + np.abs(g[labels == 1].sum(axis=0))) / 6
    np.testing.assert_allclose(_linear_scores(x, w, b, labels, mode), expected, rtol=1e-12, atol=1e-15)


def test_scores_reject_empty_mask_and_bad_mode():
    tape = ad.Tape()
    x = tape.var(np.ones((2, 2)))
    probs = ad.softmax_rows(x)
    with pytest.raises(ValueError):
        gradient_scores(tape, x, probs, [0, 1], np.zeros(2, bool))
    with pytest.raises(ValueError):
        gradient_scores(tape, x, probs, [0, 1], np.ones(2, bool), mode="sum")


# ---------------------------------------------------------------- top-k


def test_top_k_all_dims():
    m = select_top_k([0.2, 0.5, 0.1], 3)
    assert m.class_idx.tolist() == [0, 1, 2] and m.surround_idx.size == 0


def test_top_k_tie_goes_to_lower_index():
    assert select_top_k([0.3, 0.1, 0.3], 1).class_idx.tolist() == [0]


def test_top_k_matches_sort_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = rng.random(10)
        oracle = sorted(sorted(range(10), key=lambda i: -s[i])[:3])
        m = select_top_k(s, 3)
        assert m.class_idx.tolist() == oracle
        assert sorted(m.class_idx.tolist() + m.surround_idx.tolist()) == list(range(10))


def test_top_k_range():
    with pytest.raises(ValueError):
        select_top_k([1.0, 2.0], 0)
    with pytest.raises(ValueError):
        select_top_k([1.0, 2.0], 3)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 12), elements=st.floats(0, 10)),
    st.floats(1e-3, 1e3),
    st.data(),
)
def test_top_k_scale_invariant(scores, c, data):
    k = data.draw(st.integers(1, scores.size))
    assert select_top_k(scores, k).class_idx.tolist() == select_top_k(scores * c, k).class_idx.tolist()


def test_mask_json_roundtrip():
    m = select_top_k([0.1, 0.9, 0.4, 0.2], 2)
    back = FeatureMask.from_json(m.to_json())
    assert back.class_idx.tolist() == [1, 2] and back.k == 2 and back.d == 4


# ---------------------------------------------------------------- distributions


def _mask(class_idx, d):
    class_idx = np.asarray(class_idx)
    return FeatureMask(len(class_idx), class_idx, np.setdiff1d(np.arange(d), class_idx), np.zeros(d))


def test_constant_row_is_uniform():
    c, s = class_feature_distributions(ad.const(np.full((2, 5), 3.0)), _mask([0, 2], 5))
    assert np.allclose(c.value, 0.5) and np.allclose(s.value, 1 / 3)


def test_distributions_sum_to_one_and_spot_row():
    x = np.random.default_rng(0).standard_normal((6, 7))
    c, s = class_feature_distributions(ad.const(x), _mask([1, 4, 5], 7))
    assert np.all(np.abs(c.value.sum(axis=1) - 1) <= 1e-12)
    assert np.all(np.abs(s.value.sum(axis=1) - 1) <= 1e-12)
    np.testing.assert_allclose(c.value[2], _softmax(x[2, [1, 4, 5]]), rtol=1e-14)
    np.testing.assert_allclose(s.value[3], _softmax(x[3, [0, 2, 3, 6]]), rtol=1e-14)


def test_full_mask_has_no_surround():
    c, s = class_feature_distributions(ad.const(np.zeros((2, 3))), _mask([0, 1, 2], 3))
    assert s is None


# ---------------------------------------------------------------- class constraint


def test_class_constraint_equal_prototypes_is_zero():
    c = ad.softmax_rows(ad.const(np.random.default_rng(0).standard_normal((5, 3))))
    p = np.array([0.2, 0.3, 0.5])
    for both in (False, True):
        assert class_constraint(c, [1, 0, 1, 1, 0], np.arange(5), Prototype(p, p), both).item() == 0.0


def test_class_constraint_at_own_prototype():
    plus, minus = np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.3, 0.1])
    c = ad.const(plus[None, :])
    val = class_constraint(c, [1], [0], Prototype(plus, minus)).item()
    assert val == pytest.approx(-_kl(plus, minus), abs=1e-15)
    assert val < 0


def test_class_constraint_three_nodes():
    plus, minus = np.array([0.5, 0.25, 0.25]), np.array([0.1, 0.1, 0.8])
    rows = np.array([[0.2, 0.2, 0.6], [0.7, 0.2, 0.1], [0.3, 0.3, 0.4]])
    labels = [1, 0, 1]
    c = ad.const(rows)
    anomalies_only = class_constraint(c, labels, np.arange(3), Prototype(plus, minus)).item()
    expected = ((_kl(rows[0], plus) - _kl(rows[0], minus)) + (_kl(rows[2], plus) - _kl(rows[2], minus))) / 2
    assert abs(anomalies_only - expected) <= 1e-12
    both = class_constraint(c, labels, np.arange(3), Prototype(plus, minus), both_classes=True).item()
    expected_both = (2 * expected + _kl(rows[1], minus) - _kl(rows[1], plus)) / 3
    assert abs(both - expected_both) <= 1e-12


def test_class_constraint_smooths_zero_entries():
    plus, minus = np.array([1.0, 0.0]), np.array([0.5, 0.5])
    val = class_constraint(ad.const([[0.5, 0.5]]), [1], [0], Prototype(plus, minus)).item()
    sp = (plus + 1e-8) / (plus + 1e-8).sum()
    assert val == pytest.approx(_kl([0.5, 0.5], sp) - 0.0, rel=1e-12)


def test_class_constraint_without_anomalies():
    p = np.array([0.5, 0.5])
    assert class_constraint(ad.const([[0.5, 0.5]]), [0], [0], Prototype(p, p)).item() == 0.0


# ---------------------------------------------------------------- surrounding constraint


def test_surround_identical_rows():
    adj = CSR.from_edges([(0, 1), (1, 2), (2, 3)], 8)
    s = ad.softmax_rows(ad.const(np.ones((8, 3))))
    sample = sample_surrounding_pairs(adj, np.arange(8), 5, np.random.default_rng(0))
    val = surrounding_constraint(s, sample).item()
    assert val <= 0 and abs(val) <= 1e-15


def _scripted_surround(s, adj, centers):
    # every node has < 5 neighbors and < 5 non-neighbors here, so the sample is
    # exactly: all neighbors positive, all non-neighbors negative
    n = s.shape[0]
    total = 0.0
    for v in centers:
        nbrs = set(adj.neighbors(v).tolist())
        pos = sum(_kl(s[u], s[v]) for u in nbrs)
        neg = sum(_kl(s[u], s[v]) for u in range(n) if u != v and u not in nbrs)
        total += pos - neg
    return total / len(centers)


def test_surround_six_node_enumerated():
    adj = CSR.from_edges([(0, 1), (1, 2), (2, 0), (3, 4), (4, 5)], 6)
    s_val = np.array(ad.softmax_rows(ad.const(np.random.default_rng(3).standard_normal((6, 3)))).value)
    centers = np.array([0, 1, 3, 5])
    sample = sample_surrounding_pairs(adj, centers, 5, np.random.default_rng(7))
    val = surrounding_constraint(ad.const(s_val), sample).item()
    assert abs(val - _scripted_surround(s_val, adj, centers)) <= 1e-12


def test_surround_edgeless_is_negative_only():
    adj = CSR.from_edges(np.zeros((0, 2)), 6)
    s_val = ad.softmax_rows(ad.const(np.random.default_rng(4).standard_normal((6, 2)))).value
    sample = sample_surrounding_pairs(adj, np.arange(6), 5, np.random.default_rng(0))
    assert np.all(sample.weight < 0)
    val = surrounding_constraint(ad.const(s_val), sample).item()
    assert abs(val - _scripted_surround(s_val, adj, np.arange(6))) <= 1e-12
    assert val < 0


def test_sampler_respects_caps():
    rng = np.random.default_rng(0)
    adj = CSR.from_edges(rng.integers(0, 200, size=(2000, 2)), 200)
    centers = np.arange(0, 200, 3)
    sample = sample_surrounding_pairs(adj, centers, 5, np.random.default_rng(1))
    for v in centers:
        here = sample.v == v
        pos = sample.u[here & (sample.weight > 0)]
        neg = sample.u[here & (sample.weight < 0)]
        nbrs = set(adj.neighbors(v).tolist())
        assert pos.size == min(5, len(nbrs)) and set(pos.tolist()) <= nbrs
        assert neg.size == 5 and len(set(neg.tolist())) == 5
        assert not (set(neg.tolist()) & nbrs) and v not in neg
    np.testing.assert_allclose(np.abs(sample.weight), 1 / centers.size)


def test_surround_gradient_both_arguments():
    adj = CSR.from_edges([(0, 1), (1, 2), (2, 3), (3, 0)], 6)
    sample = sample_surrounding_pairs(adj, np.arange(6), 2, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((6, 3))
    rep = ad.grad_check(lambda t, p: surrounding_constraint(ad.softmax_rows(p["x"]), sample), {"x": x}, tol=1e-7)
    assert rep.passed, rep.errors


# ---------------------------------------------------------------- prototypes


def test_prototype_identical_members():
    c = np.array([0.1, 0.6, 0.3])
    rows = np.tile(c, (4, 1))
    labels = np.array([1, 1, 0, 0])
    first = prototype_update(rows, labels, np.arange(4), None)
    again = prototype_update(rows, labels, np.arange(4), first)
    np.testing.assert_allclose(first.plus, c, rtol=1e-15)
    np.testing.assert_allclose(again.minus, c, rtol=1e-15)
    assert again.epoch == 1


def test_prototype_weights_positive_normalized():
    rng = np.random.default_rng(0)
    members = rng.dirichlet(np.ones(4), size=9)
    w = prototype_weights(members, rng.dirichlet(np.ones(4)), 0.5)
    assert np.all(w > 0) and abs(w.sum() - 1) <= 1e-12


def test_prototype_two_member_hand_computation():
    a, b = [0.7, 0.2, 0.1], [0.2, 0.3, 0.5]
    prev = [0.5, 0.3, 0.2]

    def cos(u, v):
        return sum(x * y for x, y in zip(u, v)) / math.sqrt(sum(x * x for x in u) * sum(y * y for y in v))

    ea, eb = math.exp(cos(a, prev)), math.exp(cos(b, prev))
    wa, wb = ea / (ea + eb), eb / (ea + eb)
    raw = [wa * x + wb * y for x, y in zip(a, b)]
    expected = [r / sum(raw) for r in raw]
    rows = np.array([a, b, [1 / 3] * 3])
    proto = Prototype(plus=np.array(prev), minus=np.full(3, 1 / 3))
    out = prototype_update(rows, np.array([1, 1, 0]), np.arange(3), proto, tau=1.0)
    assert np.max(np.abs(out.plus - expected)) <= 1e-12


def test_prototype_initial_mean_pooling():
    rows = np.array([[0.5, 0.5], [0.1, 0.9], [0.3, 0.7]])
    out = prototype_update(rows, np.array([1, 1, 0]), np.arange(3), None)
    np.testing.assert_allclose(out.plus, [0.3, 0.7])
    np.testing.assert_allclose(out.minus, [0.3, 0.7])


def test_prototype_errors():
    rows = np.full((2, 2), 0.5)
    with pytest.raises(ValueError, match="class 0"):
        prototype_update(rows, np.array([1, 1]), np.arange(2), None)
    with pytest.raises(ValueError):
        prototype_update(rows, np.array([1, 0]), np.arange(2), None, tau=0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), tau=st.floats(0.05, 5.0), n=st.integers(2, 10), k=st.integers(1, 6))
def test_prototype_is_convex_and_valid(seed, tau, n, k):
    rng = np.random.default_rng(seed)
    rows = rng.dirichlet(np.ones(k), size=n)
    labels = np.array([1, 0] + list(rng.integers(0, 2, size=n - 2)))
    prev = Prototype(rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k)), tau)
    out = prototype_update(rows, labels, np.arange(n), prev, tau)
    for c, p in ((1, out.plus), (0, out.minus)):
        members = rows[labels == c]
        assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-9
        assert np.all(p >= members.min(axis=0) - 1e-12) and np.all(p <= members.max(axis=0) + 1e-12)


# ---------------------------------------------------------------- total loss and schedule


def test_total_loss_cases():
    ce, cla, sur = ad.const(0.7), ad.const(-0.5), ad.const(-0.7)
    assert total_loss(ce, cla, sur, 0.0)[0].item() == 0.7
    assert total_loss(ce, ad.const(0.0), ad.const(0.0), 0.3)[0].item() == pytest.approx(1.0, abs=1e-15)
    loss, capped = total_loss(ce, cla, sur, 0.5)
    assert loss.item() == pytest.approx(0.7 + 0.5 * math.exp(-1.2), abs=1e-15) and not capped
    assert total_loss(ce, ad.const(-1.2), None, 0.5)[0].item() == pytest.approx(0.7 + 0.5 * math.exp(-1.2))


def test_total_loss_caps_exponent():
    loss, capped = total_loss(ad.const(0.0), ad.const(500.0), None, 1.0)
    assert capped and loss.item() == pytest.approx(math.exp(EXP_CAP))
    with pytest.raises(ValueError):
        total_loss(ad.const(0.0), ad.const(0.0), None, -0.1)


@pytest.mark.parametrize(
    "epoch, warmup, refresh, action",
    [(3, 5, 1, "none"), (5, 5, 1, "recompute"), (9, 5, 1, "recompute"), (6, 5, 2, "none"), (7, 5, 2, "recompute")],
)
def test_schedule(epoch, warmup, refresh, action):
    assert separation_schedule(epoch, warmup, refresh) == action


def test_schedule_rejects_bad_arguments():
    with pytest.raises(ValueError):
        separation_schedule(0, -1)
    with pytest.raises(ValueError):
        separation_schedule(0, 0, 0)
