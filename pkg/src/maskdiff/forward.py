"""Absorbing-rate forward CTMC on [S]^d and its exact reverse.

Every token jumps to the mask at rate 1 (constant schedule); the survival
probability of an unmasked token is ``alpha(t) = exp(-t)``.  Reverse-time
quantities use reverse time ``s`` with forward time ``T - s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .state import (
    DenseDistribution,
    Vocab,
    all_states,
    encode,
    masked_coords,
    replace,
)


def alpha(t):
    """Survival probability ``exp(-t)`` of an unmasked token."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("time must be non-negative")
    return np.exp(-np.asarray(t, dtype=float)) if np.ndim(t) else math.exp(-t)


def alpha_prime(t):
    return -alpha(t)


def alpha_inverse(u):
    if np.any(np.asarray(u) <= 0) or np.any(np.asarray(u) > 1):
        raise ValueError("alpha_inverse is defined on (0, 1]")
    return -np.log(u) if np.ndim(u) else -math.log(u)


def score_scale(t: float) -> float:
    """``alpha_t / (1 - alpha_t)``, the total per-coordinate unmasking rate."""
    if t <= 0:
        raise ValueError("score scale needs t > 0")
    return 1.0 / math.expm1(t)


def token_kernel(vocab: Vocab, t: float) -> np.ndarray:
    """Single-token transition matrix ``alpha I + (1 - alpha) 1 e_mask^T``."""
    a = alpha(t)
    K = a * np.eye(vocab.S)
    K[:, vocab.mask_id] += 1.0 - a
    K[vocab.mask_id, vocab.mask_id] = 1.0
    return K


def forward_cond_prob(x: Sequence[int], x0: Sequence[int], t: float, vocab: Vocab) -> float:
    """Closed-form ``q_{t|0}(x | x0)``, a product of per-token factors."""
    if t < 0:
        raise ValueError("time must be non-negative")
    x, x0 = vocab.validate(x), vocab.validate(x0)
    M = vocab.mask_id
    a = math.exp(-t)
    p = 1.0
    for xi, oi in zip(x, x0):
        if oi == M:
            if xi != M:
                return 0.0
        elif xi == M:
            p *= 1.0 - a
        elif xi == oi:
            p *= a
        else:
            return 0.0
    return p


def _apply_token_kernel(q: DenseDistribution, K: np.ndarray) -> DenseDistribution:
    t = q.tensor()
    for i in range(q.vocab.d):
        t = np.moveaxis(np.tensordot(t, K, axes=([i], [0])), -1, i)
    return DenseDistribution.from_tensor(t, q.vocab, normalize=True)


def marginal(q0: DenseDistribution, t: float) -> DenseDistribution:
    """Forward marginal ``q_t``, pushing ``q0`` through the factorized kernel."""
    if t < 0:
        raise ValueError("time must be non-negative")
    if t == 0:
        return q0
    return _apply_token_kernel(q0, token_kernel(q0.vocab, t))


def clean_conditional(q0: DenseDistribution, x: Sequence[int], i: int) -> np.ndarray:
    """``q_0^i(. | x^UM)`` as a length-S vector with zero mask entry."""
    vocab = q0.vocab
    x = vocab.validate(x)
    if x[i] != vocab.mask_id:
        raise ValueError(f"coordinate {i} of {x} is not masked")
    idx = tuple(slice(None) if v == vocab.mask_id else v for v in x)
    sub = q0.tensor()[idx]
    # remaining axes are the masked coordinates in increasing order
    free = [j for j, v in enumerate(x) if v == vocab.mask_id]
    ax = free.index(i)
    other = tuple(k for k in range(sub.ndim) if k != ax)
    c = np.array(sub.sum(axis=other) if other else sub, dtype=float)
    c[vocab.mask_id] = 0.0
    z = c.sum()
    if z <= 0:
        raise ValueError(f"conditioning event for {x} has zero probability under q0")
    return c / z


def concrete_score(q0: DenseDistribution, x: Sequence[int], i: int, a: int, t: float,
                   qt: DenseDistribution | None = None) -> float:
    """Ratio ``q_t(x^{-i} (+)_i a) / q_t(x)`` for a masked coordinate ``i``."""
    vocab = q0.vocab
    x = vocab.validate(x)
    if t <= 0:
        raise ValueError("concrete score needs t > 0")
    if x[i] != vocab.mask_id or a == vocab.mask_id:
        raise ValueError("concrete score is defined for mask -> token moves")
    if qt is None:
        qt = marginal(q0, t)
    den = qt.probs[encode(x, vocab)]
    if den <= 0:
        raise ValueError(f"q_t({x}) = 0")
    return float(qt.probs[encode(replace(x, i, a), vocab)] / den)


@dataclass(frozen=True)
class Generator:
    """Dense rate matrix; ``matrix[x, y]`` is the jump rate x -> y."""

    matrix: np.ndarray
    time: float | None = None

    def check(self, atol: float = 1e-10) -> "Generator":
        R = self.matrix
        off = R - np.diag(np.diag(R))
        if np.any(off < -atol):
            raise ValueError("negative off-diagonal rate")
        scale = max(1.0, float(np.abs(R).max(initial=0.0)))
        if np.any(np.abs(R.sum(axis=1)) > atol * scale):
            raise ValueError("rows of a generator must sum to zero")
        return self

    def to_csv(self, path) -> None:
        rows, cols = np.nonzero(self.matrix)
        with open(path, "w") as fh:
            fh.write("row,col,rate\n")
            for r, c in zip(rows, cols):
                fh.write(f"{r},{c},{self.matrix[r, c]!r}\n")


def build_forward_generator(vocab: Vocab) -> Generator:
    vocab.check_exact()
    states = all_states(vocab)
    n = vocab.n_states
    R = np.zeros((n, n))
    rows = np.arange(n)
    for i in range(vocab.d):
        live = states[:, i] != vocab.mask_id
        src = rows[live]
        dst = src + (vocab.mask_id - states[live, i]) * vocab.S**i
        R[src, dst] = 1.0
    R[rows, rows] = -R.sum(axis=1)
    return Generator(R)


def generator_from_scores(vocab: Vocab, rate: Callable[[tuple, int, int], float],
                          active: np.ndarray | None = None, time: float | None = None) -> Generator:
    """Reverse-type generator: ``rate(x, i, a)`` for unmasking ``x^i -> a``.

    States with ``active[k] == False`` get zero rows.
    """
    vocab.check_exact()
    n = vocab.n_states
    R = np.zeros((n, n))
    for k in range(n):
        if active is not None and not active[k]:
            continue
        x = _decode_cached(vocab)[k]
        for i in masked_coords(x, vocab):
            base = k - vocab.mask_id * vocab.S**i
            for a in vocab.tokens:
                R[k, base + a * vocab.S**i] = rate(x, i, a)
        R[k, k] = -R[k].sum()
    return Generator(R, time)


_DECODE_CACHE: dict = {}


def _decode_cached(vocab: Vocab) -> list[tuple[int, ...]]:
    if vocab not in _DECODE_CACHE:
        _DECODE_CACHE[vocab] = [tuple(int(v) for v in row) for row in all_states(vocab)]
    return _DECODE_CACHE[vocab]


def build_reverse_generator(q0: DenseDistribution, s: float, T: float) -> Generator:
    """True reverse generator at reverse time ``s`` (forward time ``T - s``)."""
    if not 0 <= s < T:
        raise ValueError(f"reverse time must satisfy 0 <= s < T, got s={s}, T={T}")
    vocab = q0.vocab
    qt = marginal(q0, T - s).probs
    active = qt > 0

    def rate(x, i, a):
        k = encode(x, vocab)
        return qt[encode(replace(x, i, a), vocab)] / qt[k]

    return generator_from_scores(vocab, rate, active, time=s)


def _uniformized_step(v: np.ndarray, R: np.ndarray, h: float, tail: float) -> np.ndarray:
    lam = float(np.max(-np.diag(R), initial=0.0))
    if lam == 0.0 or h == 0.0:
        return v
    # keep lam*h moderate so exp(-lam*h) does not underflow
    n_chunks = max(1, math.ceil(lam * h / 30.0))
    h = h / n_chunks
    P = np.eye(R.shape[0]) + R / lam
    mu = lam * h
    for _ in range(n_chunks):
        w = math.exp(-mu)
        term = v.copy()
        out = w * term
        cum = w
        n = 0
        while 1.0 - cum > tail or n < mu:
            n += 1
            term = term @ P
            w *= mu / n
            out += w * term
            cum += w
            if n > 10_000:
                break
        v = out
    return v


def ctmc_propagate(p: DenseDistribution, gen, t0: float, t1: float, substeps: int = 64,
                   tail: float = 1e-13, grid=None) -> DenseDistribution:
    """Solve the Kolmogorov forward equation from ``t0`` to ``t1``.

    ``gen`` is a :class:`Generator`, a matrix, or a callable ``time -> Generator``.
    Each substep freezes the rates at its midpoint and applies ``exp(h R)`` by
    uniformization.  ``grid`` overrides the uniform substep grid.
    """
    if not t0 < t1:
        raise ValueError("need t0 < t1")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    vocab = p.vocab
    vocab.check_exact()
    if grid is None:
        grid = np.linspace(t0, t1, substeps + 1)
    v = np.array(p.probs)
    for a, b in zip(grid[:-1], grid[1:]):
        g = gen(0.5 * (a + b)) if callable(gen) else gen
        R = g.matrix if isinstance(g, Generator) else np.asarray(g, dtype=float)
        Generator(R).check()
        v = _uniformized_step(v, R, float(b - a), tail)
    v = np.clip(v, 0.0, None)
    return DenseDistribution(v, vocab, normalize=True)


def construct_q_gamma(a: Sequence[int], gamma: float, vocab: Vocab) -> DenseDistribution:
    """Worst-case Euler target: ``delta_a`` run forward for time ``gamma``."""
    a = vocab.validate(a)
    if vocab.mask_id in a:
        raise ValueError("the anchor sequence must be mask-free")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return marginal(DenseDistribution.delta(a, vocab), gamma)


def compute_gamma_ratio(q0: DenseDistribution) -> float:
    """Smallest ratio of mask mass to the largest token mass over all
    single-coordinate conditionals ``q_0^i(. | x^{-i})`` with positive context mass."""
    vocab = q0.vocab
    t = q0.tensor()
    M = vocab.mask_id
    best = math.inf
    for i in range(vocab.d):
        c = np.moveaxis(t, i, -1).reshape(-1, vocab.S)
        ctx = c.sum(axis=1) > 0
        if not np.any(ctx):
            continue
        c = c[ctx]
        top = np.delete(c, M, axis=1).max(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(top > 0, c[:, M] / np.where(top > 0, top, 1.0), math.inf)
        best = min(best, float(r.min()))
    return best


def init_tv_closed_form(q0: DenseDistribution, T: float) -> float:
    """``1 - sum_x0 q0(x0) (1 - e^{-T})^{d - m(x0)}``: TV between q_T and all-mask."""
    states = all_states(q0.vocab)
    unmasked = (states != q0.vocab.mask_id).sum(axis=1)
    return float(1.0 - np.sum(q0.probs * (-math.expm1(-T)) ** unmasked))
