"""Exact score-entropy, L1 rate error, NELBO and conditional-entropy evaluations.

All time integrals over ``(0, inf)`` are taken in the variable
``alpha = exp(-t)`` on ``(0, 1)``, where the integrands are smooth (and
polynomial for time-independent predictors).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .forward import marginal, score_scale
from .predictors import Predictor, mu_bar
from .samplers import StepSchedule
from .state import DenseDistribution, Vocab, all_states

MAX_SUBSET_D = 12


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre in ``alpha``; node count doubles until converged.

    Panels are graded toward ``alpha = 1`` (small forward time).
    """

    nodes: int = 8
    panels: tuple = (0.0, 0.5, 0.8, 0.95, 0.99, 0.999, 1.0)
    tol: float = 1e-10
    max_nodes: int = 256


def _gl_panels(f: Callable[[float], float], panels, n: int) -> float:
    z, w = np.polynomial.legendre.leggauss(n)
    total = 0.0
    for a, b in zip(panels[:-1], panels[1:]):
        half, mid = 0.5 * (b - a), 0.5 * (b + a)
        total += half * sum(wi * f(mid + half * zi) for zi, wi in zip(z, w))
    return total


def integrate_alpha(f: Callable[[float], float], quad: QuadratureSpec = QuadratureSpec()) -> float:
    """``int_0^1 f(alpha) d alpha`` to the configured absolute tolerance."""
    n = quad.nodes
    prev = _gl_panels(f, quad.panels, n)
    while True:
        n *= 2
        cur = _gl_panels(f, quad.panels, n)
        if abs(cur - prev) < quad.tol:
            return float(cur)
        if n >= quad.max_nodes:
            raise QuadratureError(
                f"quadrature did not converge: |change| = {abs(cur - prev):.3g} with {n} nodes/panel"
            )
        prev = cur


@dataclass
class _Moves:
    """All single-coordinate unmasking moves x -> x^{-i} (+)_i a."""

    src: np.ndarray
    dst: np.ndarray
    coord: np.ndarray
    token: np.ndarray


_MOVES: dict = {}


def _moves(vocab: Vocab) -> _Moves:
    if vocab not in _MOVES:
        states = all_states(vocab)
        src, dst, coord, token = [], [], [], []
        for k, x in enumerate(states):
            for i in np.flatnonzero(x == vocab.mask_id):
                for a in vocab.tokens:
                    src.append(k)
                    dst.append(k + (a - vocab.mask_id) * vocab.S**i)
                    coord.append(i)
                    token.append(a)
        _MOVES[vocab] = _Moves(*(np.asarray(v, dtype=np.int64) for v in (src, dst, coord, token)))
    return _MOVES[vocab]


def _mu_on_moves(pred: Predictor, mv: _Moves, t: float, live: np.ndarray) -> np.ndarray:
    """``mu(x, i, t)[a]`` for every move whose source is in ``live``."""
    vocab = pred.vocab
    states = all_states(vocab)
    out = np.zeros(len(mv.src))
    cache = {}
    for j in np.flatnonzero(live[mv.src]):
        key = (mv.src[j], mv.coord[j])
        m = cache.get(key)
        if m is None:
            m = cache[key] = pred.mu(tuple(int(v) for v in states[mv.src[j]]), int(mv.coord[j]), t)
        out[j] = m[mv.token[j]]
    return out


def score_entropy_at(q0: DenseDistribution, pred: Predictor, t: float) -> float:
    """Score-entropy loss at forward time ``t``, exact expectation over ``q_t``.

    Moves with a zero true ratio contribute ``s`` (the Bregman limit).
    """
    if t <= 0:
        raise ValueError("score entropy needs t > 0")
    vocab = q0.vocab
    vocab.check_exact()
    qt = marginal(q0, t).probs
    mv = _moves(vocab)
    live = qt > 0
    sel = live[mv.src]
    s = score_scale(t) * _mu_on_moves(pred, mv, t, live)[sel]
    px = qt[mv.src[sel]]
    py = qt[mv.dst[sel]]
    r = py / px
    with np.errstate(divide="ignore", invalid="ignore"):
        body = np.where(r > 0, s - r - r * (np.log(s) - np.log(np.where(r > 0, r, 1.0))), s)
    return float(np.sum(px * body))


def integrated_score_entropy(q0: DenseDistribution, pred: Predictor,
                             quad: QuadratureSpec = QuadratureSpec()) -> float:
    """``int_0^inf L_SE(t) dt`` via ``alpha = e^{-t}``, ``dt = -d alpha / alpha``."""
    def f(a):
        return score_entropy_at(q0, pred, -math.log(a)) / a

    return integrate_alpha(f, quad)


def l_tv_error(q0: DenseDistribution, pred: Predictor, sched: StepSchedule) -> float:
    """Grid-weighted expected L1 gap between estimated and true concrete scores."""
    q0.vocab.check_exact()
    return sum(float(eta) * expected_rate_gap(q0, pred, sched.T - float(t_k))
               for t_k, eta in zip(sched.grid[:-1], sched.steps))


def _check_mask_free(x0: Sequence[int], vocab: Vocab) -> tuple[int, ...]:
    x0 = vocab.validate(x0)
    if vocab.mask_id in x0:
        raise ValueError(f"{x0} contains the mask token")
    return x0


def _subsets(d: int, k: int):
    return itertools.combinations(range(d), k)


def _masked(x0: tuple, M: Sequence[int], mask_id: int) -> tuple:
    x = list(x0)
    for i in M:
        x[i] = mask_id
    return tuple(x)


def nelbo(x0: Sequence[int], pred: Predictor, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """Continuous-time NELBO, normalized so the exact predictor of ``delta_{x0}`` scores 0.

    In ``alpha``: ``int_0^1 sum_M (1-alpha)^{|M|-1} alpha^{d-|M|}
    sum_{l in M} -log mu^l(x0 masked on M, t)[x0^l] d alpha``.
    """
    vocab = pred.vocab
    x0 = _check_mask_free(x0, vocab)
    d = vocab.d
    if d > MAX_SUBSET_D:
        raise ValueError(f"subset enumeration capped at d <= {MAX_SUBSET_D}")
    subsets = [M for k in range(1, d + 1) for M in _subsets(d, k)]
    states = [_masked(x0, M, vocab.mask_id) for M in subsets]

    def nll(M, x, t):
        return -sum(math.log(pred.mu(x, l, t)[x0[l]]) for l in M)

    if pred.time_independent:
        fixed = [nll(M, x, 1.0) for M, x in zip(subsets, states)]

        def f(a):
            return sum((1 - a) ** (len(M) - 1) * a ** (d - len(M)) * c for M, c in zip(subsets, fixed))
    else:
        def f(a):
            t = -math.log(a)
            return sum((1 - a) ** (len(M) - 1) * a ** (d - len(M)) * nll(M, x, t)
                       for M, x in zip(subsets, states))

    return integrate_alpha(f, quad)


def nelbo_discrete(x0: Sequence[int], pred: Predictor, n_nodes: int = 64) -> float:
    """NELBO as a finite sum over mask sets with Beta-averaged predictors."""
    vocab = pred.vocab
    x0 = _check_mask_free(x0, vocab)
    d = vocab.d
    if d > MAX_SUBSET_D:
        raise ValueError(f"subset enumeration capped at d <= {MAX_SUBSET_D}")
    total = 0.0
    for k in range(1, d + 1):
        acc = 0.0
        n_sets = 0
        for M in _subsets(d, k):
            bar = mu_bar(pred, _masked(x0, M, vocab.mask_id), n_nodes)
            acc += -sum(math.log(bar[l][x0[l]]) for l in M)
            n_sets += 1
        total += acc / (k * n_sets)
    return total


def _entropy_of(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def conditional_entropy_sum(q0: DenseDistribution) -> float:
    """``sum_k (1/k) E_{M_k} sum_{l in M_k} H(x^l | x^{M_k^c})`` under ``q0``."""
    vocab = q0.vocab
    d = vocab.d
    if d > MAX_SUBSET_D:
        raise ValueError(f"subset enumeration capped at d <= {MAX_SUBSET_D}")
    t = q0.tensor()
    total = 0.0
    for k in range(1, d + 1):
        acc = 0.0
        n_sets = 0
        for M in _subsets(d, k):
            ctx = t.sum(axis=tuple(M)) if M else t
            h_ctx = _entropy_of(ctx.reshape(-1))
            for l in M:
                drop = tuple(j for j in M if j != l)
                joint = t.sum(axis=drop) if drop else t
                acc += _entropy_of(joint.reshape(-1)) - h_ctx
            n_sets += 1
        total += acc / (k * n_sets)
    return total


def expected_nelbo(q0: DenseDistribution, pred: Predictor) -> float:
    """``E_{x0 ~ q0}[nelbo_discrete(x0)]`` over the support of ``q0``."""
    total = 0.0
    for x0 in q0.support():
        total += q0[x0] * nelbo_discrete(x0, pred)
    return total


def prop2_identity_gap(q0: DenseDistribution, pred: Predictor,
                       quad: QuadratureSpec = QuadratureSpec()) -> dict:
    """Both sides of the score-entropy / NELBO identity and their difference.

    Returns ``{"lse", "nelbo_mean", "entropy_sum", "gap"}`` with
    ``gap = lse - (nelbo_mean - entropy_sum)``.
    """
    if q0.mask_mass() > 0:
        raise ValueError("q0 must be supported on mask-free sequences")
    lse = integrated_score_entropy(q0, pred, quad)
    nel = expected_nelbo(q0, pred)
    ent = conditional_entropy_sum(q0)
    return {"lse": lse, "nelbo_mean": nel, "entropy_sum": ent, "gap": lse - (nel - ent)}


def expected_rate_gap(q0: DenseDistribution, pred: Predictor, u: float) -> float:
    """``E_{x ~ q_u} sum_y |R_hat(x, y) - R_true(x, y)|`` at forward time ``u``."""
    vocab = q0.vocab
    mv = _moves(vocab)
    qt = marginal(q0, u).probs
    live = qt > 0
    sel = live[mv.src]
    s = score_scale(u) * _mu_on_moves(pred, mv, u, live)[sel]
    r = qt[mv.dst[sel]] / qt[mv.src[sel]]
    return float(np.sum(qt[mv.src[sel]] * np.abs(s - r)))


def loss_report(q0: DenseDistribution, pred: Predictor, sched: StepSchedule | None = None,
                quad: QuadratureSpec = QuadratureSpec()) -> dict:
    """Every loss for one (q0, predictor) pair, keyed as in the loss report JSON."""
    from .samplers import fhs_exact_output
    from .state import kl

    gap = prop2_identity_gap(q0, pred, quad)
    out = {
        "lse_integrated": gap["lse"],
        "ltv": l_tv_error(q0, pred, sched) if sched is not None else None,
        "nelbo_mean": gap["nelbo_mean"],
        "entropy_sum": gap["entropy_sum"],
        "prop2_gap": gap["gap"],
        "kl_fhs": kl(q0, fhs_exact_output(pred, q0.vocab)) if pred.time_independent else None,
    }
    return out


__all__ = [
    "loss_report",
    "QuadratureSpec",
    "QuadratureError",
    "integrate_alpha",
    "score_entropy_at",
    "integrated_score_entropy",
    "l_tv_error",
    "nelbo",
    "nelbo_discrete",
    "conditional_entropy_sum",
    "expected_nelbo",
    "prop2_identity_gap",
    "expected_rate_gap",
]
