import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from srdetect import objectives as obj
from srdetect.objectives import (
    LossConfig,
    cosine_sim,
    cross_entropy_loss,
    total_loss,
    triplet_loss,
    variance_loss,
)

from . import oracles

D = torch.float64


def t(x):
    return torch.tensor(x, dtype=D)


def test_cosine_hand_cases():
    u = t([0.3, -2.0, 5.0])
    assert float(cosine_sim(u, u)) == pytest.approx(1.0, abs=1e-15)
    assert float(cosine_sim(u, -u)) == pytest.approx(-1.0, abs=1e-15)
    assert float(cosine_sim(t([1.0, 0.0]), t([1.0, 1.0]))) == pytest.approx(1 / math.sqrt(2), abs=1e-15)


def test_cosine_zero_norm_defined_and_counted():
    obj.reset_zero_norm_events()
    u = torch.zeros(3, dtype=D, requires_grad=True)
    s = cosine_sim(u, t([1.0, 2.0, 3.0]))
    assert float(s.detach()) == 0.0
    assert obj.zero_norm_events() == 1
    s.backward()
    assert torch.isfinite(u.grad).all()


def test_triplet_satisfied_is_zero():
    a = t([[1.0, 0.0]])
    assert float(triplet_loss(a, a.clone(), -a, 0.2)) == 0.0


def test_triplet_collapsed_negative():
    a = t([[1.0, 0.0]])
    p = t([[0.0, 1.0]])
    assert float(triplet_loss(a, p, a.clone(), 0.2)) == pytest.approx(1.2, abs=1e-15)


def test_triplet_all_identical_gives_margin():
    a = t([[0.5, 0.5, 1.0]] * 4)
    assert float(triplet_loss(a, a, a, 0.2)) == pytest.approx(0.2, abs=1e-15)


def test_triplet_literal_flag_matches_printed_expression(rng):
    a, p, n = (t(rng.standard_normal((5, 4))) for _ in range(3))
    lit = float(triplet_loss(a, p, n, 0.2, paper_literal=True))
    assert lit == pytest.approx(oracles.triplet(a.tolist(), p.tolist(), n.tolist(), 0.2, literal=True), abs=1e-12)


def test_triplet_scale_invariant(rng):
    a, p, n = (t(rng.standard_normal((6, 5))) for _ in range(3))
    base = triplet_loss(a, p, n, 0.2)
    scaled_a = a.clone()
    scaled_a[2] *= 7.5
    assert float(triplet_loss(scaled_a, p * 0.01, n, 0.2)) == pytest.approx(float(base), abs=1e-12)


def test_triplet_permutation_invariant(rng):
    a, p, n = (t(rng.standard_normal((8, 3))) for _ in range(3))
    perm = torch.from_numpy(rng.permutation(8))
    assert float(triplet_loss(a[perm], p[perm], n[perm])) == pytest.approx(float(triplet_loss(a, p, n)), abs=1e-14)


def test_variance_collapsed_batches():
    h = t([[0.3] * 16] * 5)
    # (1/d) * sum_j (1 - sqrt(1e-4)) = 0.99 per batch
    assert float(obj.batch_variance_penalty(h, 1.0, 1e-4)) == pytest.approx(0.99, abs=1e-12)
    assert float(variance_loss(h, h, h, 1.0, 1e-4)) == pytest.approx(2.97, abs=1e-9)


def test_variance_saturates():
    h = t([[0.0, -3.0], [2.0, 3.0]])  # population std 1 and 3
    assert float(obj.batch_variance_penalty(h)) == 0.0
    assert float(variance_loss(h, h, h)) == 0.0


def test_variance_two_row_column():
    col = t([[0.0], [2.0]])
    assert max(0.0, 1.0 - math.sqrt(1.0 + 1e-4)) == 0.0
    assert float(obj.batch_variance_penalty(col)) == 0.0


def test_variance_needs_two_rows():
    with pytest.raises(ValueError):
        variance_loss(t([[1.0, 2.0]]), t([[1.0, 2.0]]), t([[1.0, 2.0]]))


def test_variance_shift_invariant(rng):
    a, p, n = (t(rng.standard_normal((6, 4)) * 0.3) for _ in range(3))
    shift = t(rng.standard_normal(4) * 10)
    base = float(variance_loss(a, p, n))
    assert float(variance_loss(a + shift, p + shift, n + shift)) == pytest.approx(base, abs=1e-12)


def test_ce_hand_cases():
    z = torch.zeros(7, 1, dtype=D)
    assert float(cross_entropy_loss(z, z, z)) == pytest.approx(math.log(2), abs=1e-12)
    neg, pos = torch.full((7, 1), -20.0, dtype=D), torch.full((7, 1), 20.0, dtype=D)
    assert float(cross_entropy_loss(neg, neg, pos)) < 1e-8
    assert float(cross_entropy_loss(neg, neg, z)) == pytest.approx(0.5 * math.log(2), abs=1e-8)


def test_ce_stable_for_huge_logits():
    big = t([[1e4], [-1e4]])
    assert torch.isfinite(cross_entropy_loss(big, big, big))


def test_total_loss_sums_enabled_terms(rng):
    a, p, n = (t(rng.standard_normal((4, 8))) for _ in range(3))
    ca, cp, cn = (t(rng.standard_normal((4, 1))) for _ in range(3))
    only_ce = total_loss(a, p, n, ca, cp, cn, LossConfig(enabled_terms=("CE",)))
    assert torch.equal(only_ce.total, only_ce.l_ce)
    full = total_loss(a, p, n, ca, cp, cn)
    assert float(full.total) == pytest.approx(float(full.l_ce + full.l_t + full.l_v), abs=1e-15)
    with pytest.raises(ValueError):
        total_loss(a, p, n, ca, cp, cn, LossConfig(enabled_terms=()))


def test_total_loss_degenerate_case():
    h = t([[1.0] * 16] * 4)
    z = torch.zeros(4, 1, dtype=D)
    out = total_loss(h, h, h, z, z, z, LossConfig(margin=0.2, gamma=1.0, eps=1e-4))
    assert float(out.total) == pytest.approx(math.log(2) + 0.2 + 2.97, abs=1e-9)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(margin=-0.1)
    with pytest.raises(ValueError):
        LossConfig(eps=0)
    with pytest.raises(ValueError):
        LossConfig(enabled_terms=("CE", "X"))


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(2, 8),
    d=st.integers(1, 16),
    scale=st.floats(0.01, 100.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_terms_nonnegative(n, d, scale, seed):
    r = np.random.default_rng(seed)
    a, p, nn = (t(r.standard_normal((n, d)) * scale) for _ in range(3))
    ca, cp, cn = (t(r.standard_normal((n, 1)) * scale) for _ in range(3))
    out = total_loss(a, p, nn, ca, cp, cn)
    assert float(out.l_t) >= 0 and float(out.l_v) >= 0 and float(out.l_ce) >= 0


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 8), d=st.integers(1, 16), seed=st.integers(0, 2**32 - 1))
def test_variance_zero_iff_all_stds_reach_gamma(n, d, seed):
    r = np.random.default_rng(seed)
    h = t(r.standard_normal((n, d)) * r.uniform(0.1, 3.0, size=d))
    std = torch.sqrt(h.var(0, unbiased=False) + 1e-4)
    zero = float(obj.batch_variance_penalty(h)) == 0.0
    assert zero == bool((std >= 1.0).all())


def _rand_case(r):
    n, d = int(r.integers(2, 9)), int(r.integers(1, 17))
    arr = lambda *s: t(r.standard_normal(s) * r.uniform(0.1, 2.0))  # noqa: E731
    return arr(n, d), arr(n, d), arr(n, d), arr(n, 1), arr(n, 1), arr(n, 1)


def test_scalar_oracle_equivalence():
    r = np.random.default_rng(2024)
    for _ in range(100):
        a, p, n, ca, cp, cn = _rand_case(r)
        A, P, N = a.tolist(), p.tolist(), n.tolist()
        m = float(r.uniform(0, 1))
        assert abs(float(triplet_loss(a, p, n, m)) - oracles.triplet(A, P, N, m)) < 1e-10
        assert abs(float(variance_loss(a, p, n, 1.0, 1e-4)) - oracles.variance(A, P, N, 1.0, 1e-4)) < 1e-10
        flat = lambda x: x.reshape(-1).tolist()  # noqa: E731
        ce = oracles.weighted_ce(flat(ca), flat(cp), flat(cn))
        assert abs(float(cross_entropy_loss(ca, cp, cn)) - ce) < 1e-10


def _central_fd(fn, x, h=1e-4):
    g = torch.zeros_like(x)
    flat, gflat = x.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = float(flat[i])
        flat[i] = old + h
        up = float(fn(x))
        flat[i] = old - h
        down = float(fn(x))
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def _rel_err(a, b):
    return float((a - b).norm() / max(float(a.norm() + b.norm()), 1e-12))


@pytest.mark.parametrize("term", ["triplet", "variance", "ce"])
def test_term_gradients_match_finite_differences(term):
    r = np.random.default_rng({"triplet": 1, "variance": 2, "ce": 3}[term])
    for _ in range(5):
        a, p, n, ca, cp, cn = _rand_case(r)
        if term == "triplet":
            inputs = [a, p, n]
            f = lambda xs: triplet_loss(*xs, margin=0.5)  # noqa: E731
        elif term == "variance":
            inputs = [a * 0.3, p * 0.3, n * 0.3]
            f = lambda xs: variance_loss(*xs)  # noqa: E731
        else:
            inputs = [ca, cp, cn]
            f = lambda xs: cross_entropy_loss(*xs)  # noqa: E731
        leaves = [x.clone().requires_grad_(True) for x in inputs]
        grads = torch.autograd.grad(f(leaves), leaves)
        for i, (x, g) in enumerate(zip(inputs, grads)):
            def along(xi, i=i):
                xs = [v.clone() for v in inputs]
                xs[i] = xi
                return f(xs)

            fd = _central_fd(along, x.clone())
            assert _rel_err(g, fd) < 1e-6
