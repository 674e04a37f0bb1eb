import math

import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings
from hypothesis import strategies as st

from maskdiff.forward import clean_conditional, marginal
from maskdiff.losses import (
    QuadratureError,
    QuadratureSpec,
    conditional_entropy_sum,
    expected_nelbo,
    expected_rate_gap,
    integrate_alpha,
    integrated_score_entropy,
    l_tv_error,
    loss_report,
    nelbo,
    nelbo_discrete,
    prop2_identity_gap,
    score_entropy_at,
)
from maskdiff.predictors import FunctionPredictor, exact_predictor, mixture_corrupted_predictor, rho_corrupted_predictor
from maskdiff.samplers import build_schedule
from maskdiff.state import DenseDistribution, Vocab, all_states, entropy, random_distribution

from conftest import subsets


def _drift(q0):
    """Time-dependent predictor: exact conditional blended toward token 0 as alpha -> 1."""
    ex = exact_predictor(q0)
    S = q0.vocab.S
    bias = np.zeros(S)
    bias[0] = 1.0

    def fn(x, i, t):
        w = 0.4 * math.exp(-t)
        return (1 - w) * ex.mu(x, i) + w * bias

    return FunctionPredictor(q0.vocab, fn)


def se_oracle(q0, pred, t):
    """Score entropy by a direct loop over states and single-coordinate unmaskings."""
    v = q0.vocab
    qt = marginal(q0, t).probs
    states = all_states(v)
    total = 0.0
    for k, x in enumerate(states):
        if qt[k] == 0:
            continue
        x = tuple(int(c) for c in x)
        for i in [j for j, c in enumerate(x) if c == v.mask_id]:
            for a in v.tokens:
                y = list(x)
                y[i] = a
                r = qt[sum(c * v.S**j for j, c in enumerate(y))] / qt[k]
                s = pred.score(x, i, a, t)
                total += qt[k] * (s if r == 0 else s - r - r * math.log(s / r))
    return total


class TestQuadrature:
    def test_polynomial_exact(self):
        assert integrate_alpha(lambda a: 5 * a**4) == pytest.approx(1.0, abs=1e-14)

    def test_reports_nonconvergence(self):
        with pytest.raises(QuadratureError, match="did not converge"):
            integrate_alpha(lambda a: math.sin(1 / (1.0001 - a)), QuadratureSpec(max_nodes=32))

    def test_log_singularity(self):
        # int_0^1 -log(1 - a) da = 1, integrable endpoint singularity at alpha = 1
        assert integrate_alpha(lambda a: -math.log1p(-a), QuadratureSpec(tol=1e-8, max_nodes=1024)) == pytest.approx(1.0, abs=1e-6)


class TestScoreEntropy:
    def test_matches_loop_oracle(self, rng):
        q0 = random_distribution(Vocab(3, 2), rng, sparsity=0.3)
        pred = mixture_corrupted_predictor(exact_predictor(q0), [0.9, 0.1], 0.4)
        for t in (0.05, 0.7, 3.0):
            assert score_entropy_at(q0, pred, t) == pytest.approx(se_oracle(q0, pred, t), rel=1e-12)

    def test_exact_is_zero(self, rng):
        q0 = random_distribution(Vocab(3, 3), rng, sparsity=0.3)
        for t in (0.01, 1.0, 5.0):
            assert abs(score_entropy_at(q0, exact_predictor(q0), t)) <= 1e-12
        assert abs(integrated_score_entropy(q0, exact_predictor(q0))) <= 1e-10

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 6.0), st.floats(0.0, 1.0))
    def test_non_negative(self, seed, t, lam):
        rng = np.random.default_rng(seed)
        q0 = random_distribution(Vocab(3, 2), rng, sparsity=0.3)
        pred = mixture_corrupted_predictor(exact_predictor(q0), rng.dirichlet([1, 1]), lam)
        assert score_entropy_at(q0, pred, t) >= -1e-14

    def test_t_must_be_positive(self, small_q0):
        with pytest.raises(ValueError):
            score_entropy_at(small_q0, exact_predictor(small_q0), 0.0)

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_rho_closed_form(self, d):
        v = Vocab(3, d)
        rho = -math.expm1(-0.3 / d)
        q0 = DenseDistribution.delta((0,) * d, v)
        pred = rho_corrupted_predictor((0,) * d, (1,) * d, rho, v)
        assert integrated_score_entropy(q0, pred) == pytest.approx(0.3, abs=1e-6)

    def test_against_scipy_quad(self, rng):
        q0 = random_distribution(Vocab(3, 2), rng)
        pred = mixture_corrupted_predictor(exact_predictor(q0), [0.2, 0.8], 0.3)
        ref, _ = scipy.integrate.quad(lambda t: score_entropy_at(q0, pred, t), 1e-12, 60, limit=200)
        assert integrated_score_entropy(q0, pred) == pytest.approx(ref, abs=1e-7)


class TestLtv:
    def test_exact_is_zero(self, small_q0):
        assert l_tv_error(small_q0, exact_predictor(small_q0), build_schedule(2.0, 0.05, 0.1)) <= 1e-12

    def test_monotone_and_linear_in_lambda(self, small_q0):
        sched = build_schedule(2.0, 0.05, 0.1)
        base = exact_predictor(small_q0)
        vals = [l_tv_error(small_q0, mixture_corrupted_predictor(base, [0.7, 0.3], lam), sched)
                for lam in (0.0, 0.1, 0.2)]
        assert vals[0] < vals[1] < vals[2]
        small = [l_tv_error(small_q0, mixture_corrupted_predictor(base, [0.7, 0.3], lam), sched)
                 for lam in (0.01, 0.02)]
        assert small[1] / small[0] == pytest.approx(2.0, rel=0.05)

    def test_grid_sum(self, small_q0):
        sched = build_schedule(2.0, 0.05, 0.3)
        pred = mixture_corrupted_predictor(exact_predictor(small_q0), [0.7, 0.3], 0.2)
        ref = sum(eta * expected_rate_gap(small_q0, pred, 2.0 - t) for t, eta in zip(sched.grid[:-1], sched.steps))
        assert l_tv_error(small_q0, pred, sched) == pytest.approx(ref, rel=1e-14)


class TestNelbo:
    def test_exact_delta_is_zero(self):
        v = Vocab(3, 3)
        x0 = (0, 1, 1)
        pred = exact_predictor(DenseDistribution.delta(x0, v))
        assert abs(nelbo(x0, pred)) <= 1e-8
        assert nelbo_discrete(x0, pred) == 0.0

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_rho(self, d):
        v = Vocab(3, d)
        rho = 0.15
        pred = rho_corrupted_predictor((0,) * d, (1,) * d, rho, v)
        assert nelbo((0,) * d, pred) == pytest.approx(-d * math.log1p(-rho), abs=1e-9)
        assert nelbo_discrete((0,) * d, pred) == pytest.approx(-d * math.log1p(-rho), abs=1e-12)

    def test_continuous_vs_discrete(self, rng):
        v = Vocab(3, 3)
        q0 = random_distribution(v, rng)
        for pred in (mixture_corrupted_predictor(exact_predictor(q0), [0.3, 0.7], 0.25), _drift(q0)):
            for x0 in [(0, 0, 0), (1, 0, 1), (0, 1, 1)]:
                assert nelbo(x0, pred) == pytest.approx(nelbo_discrete(x0, pred), abs=1e-6)

    def test_mask_rejected(self, small_q0):
        with pytest.raises(ValueError):
            nelbo((0, 2), exact_predictor(small_q0))

    def test_subset_cap(self):
        v = Vocab(2, 13)
        with pytest.raises(ValueError, match="subset"):
            nelbo_discrete((0,) * 13, _ConstPred(v))


class _ConstPred(FunctionPredictor):
    def __init__(self, v):
        super().__init__(v, lambda x, i, t: np.array([1.0, 0.0]), time_independent=True)


class TestEntropySum:
    def test_delta_is_zero(self):
        assert conditional_entropy_sum(DenseDistribution.delta((0, 1, 0), Vocab(3, 3))) == 0.0

    def test_product_collapses(self):
        v = Vocab(4, 3)
        p = np.array([0.2, 0.5, 0.3, 0.0])
        assert conditional_entropy_sum(DenseDistribution.product(p, v)) == pytest.approx(3 * entropy(p), abs=1e-13)
        uni = DenseDistribution.product(np.array([1, 1, 1, 0.0]), v)
        assert conditional_entropy_sum(uni) == pytest.approx(3 * math.log(3), abs=1e-13)

    def test_matches_conditional_oracle(self, rng):
        v = Vocab(3, 3)
        q0 = random_distribution(v, rng, sparsity=0.3)
        states = all_states(v)
        total = 0.0
        for k in range(1, v.d + 1):
            sets = [M for M in subsets(v.d) if len(M) == k]
            acc = 0.0
            for M in sets:
                for j, x0 in enumerate(states):
                    if q0.probs[j] == 0:
                        continue
                    x = tuple(v.mask_id if i in M else int(c) for i, c in enumerate(x0))
                    for l in M:
                        acc += q0.probs[j] * entropy(clean_conditional(q0, x, l))
            total += acc / (k * len(sets))
        assert conditional_entropy_sum(q0) == pytest.approx(total, abs=1e-12)


class TestEntropyNelboIdentity:
    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.integers(1, 3), st.floats(0.0, 1.0))
    def test_identity_mixture(self, seed, S, d, lam):
        rng = np.random.default_rng(seed)
        q0 = random_distribution(Vocab(S, d), rng, sparsity=0.2)
        pred = mixture_corrupted_predictor(exact_predictor(q0), rng.dirichlet(np.ones(S - 1)), max(lam, 0.01))
        assert abs(prop2_identity_gap(q0, pred)["gap"]) <= 1e-5

    def test_identity_time_dependent(self, rng):
        q0 = random_distribution(Vocab(3, 2), rng)
        assert abs(prop2_identity_gap(q0, _drift(q0))["gap"]) <= 1e-5

    def test_exact_rows(self, rng):
        q0 = random_distribution(Vocab(3, 3), rng)
        r = prop2_identity_gap(q0, exact_predictor(q0))
        assert abs(r["lse"]) <= 1e-8
        assert abs(expected_nelbo(q0, exact_predictor(q0)) - conditional_entropy_sum(q0)) <= 1e-8

    def test_rho_row(self):
        d, rho = 3, 0.2
        v = Vocab(3, d)
        r = prop2_identity_gap(DenseDistribution.delta((0,) * d, v), rho_corrupted_predictor((0,) * d, (1,) * d, rho, v))
        assert r["lse"] == pytest.approx(-d * math.log1p(-rho), abs=1e-6)
        assert r["nelbo_mean"] - r["entropy_sum"] == pytest.approx(-d * math.log1p(-rho), abs=1e-12)

    def test_mask_mass_rejected(self):
        v = Vocab(3, 1)
        with pytest.raises(ValueError):
            prop2_identity_gap(DenseDistribution([0.5, 0.0, 0.5], v), rho_corrupted_predictor((0,), (1,), 0.1, v))


class TestReport:
    def test_keys(self, small_q0):
        pred = mixture_corrupted_predictor(exact_predictor(small_q0), [0.5, 0.5], 0.1)
        r = loss_report(small_q0, pred, build_schedule(2.0, 0.05, 0.2))
        assert set(r) == {"lse_integrated", "ltv", "nelbo_mean", "entropy_sum", "prop2_gap", "kl_fhs"}
        assert r["kl_fhs"] <= r["lse_integrated"] + 1e-6
