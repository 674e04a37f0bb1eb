"""Euler (tau-leaping style) and first-hitting samplers for the masked reverse chain.

Both samplers come in two flavours: exact propagation of the full p.m.f. over
[S]^d, and Monte Carlo draws.  Batched Monte Carlo routines consume a single
``numpy.random.Generator`` stream seeded from the master seed, so results are
reproducible for a fixed (seed, trial count).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .predictors import Predictor
from .state import DenseDistribution, Vocab, all_states, decode, encode, masked_coords


class StepTooLarge(ValueError):
    """Euler stay probability went negative for some coordinate."""

    def __init__(self, msg, step=None, state=None):
        super().__init__(msg)
        self.step = step
        self.state = state


@dataclass(frozen=True)
class StepSchedule:
    T: float
    delta: float
    kappa: float
    kind: str
    grid: np.ndarray = field(repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.grid) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.grid)


def build_schedule(T: float, delta: float, kappa: float, kind: str = "decaying") -> StepSchedule:
    """Reverse-time grid from 0 to ``T - delta``.

    ``constant`` uses steps of ``kappa``; ``decaying`` uses
    ``kappa * min(1, T - t_k)``.  Both clip the last step to land on ``T - delta``.
    """
    if not T > delta >= 0:
        raise ValueError(f"need T > delta >= 0, got T={T}, delta={delta}")
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    end = T - delta
    eps = 1e-12 * max(1.0, T)
    if kind == "constant":
        n = math.floor(end / kappa + 1e-9)
        grid = [k * kappa for k in range(n + 1)]
        if end - grid[-1] > eps:
            grid.append(end)
        else:
            grid[-1] = end
    elif kind == "decaying":
        if delta == 0:
            raise ValueError("the decaying schedule needs delta > 0 (the grid would be infinite)")
        grid = [0.0]
        t = 0.0
        while end - t > eps:
            t = t + kappa * min(1.0, T - t)
            if t >= end - eps:
                t = end
            grid.append(t)
        n = len(grid) - 1
        bound = 4.0 * (T + math.log(1.0 / delta)) / kappa
        assert n <= bound, f"decaying grid has {n} steps, above the {bound:.0f} sanity bound"
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    g = np.asarray(grid, dtype=float)
    g.setflags(write=False)
    return StepSchedule(T=T, delta=delta, kappa=kappa, kind=kind, grid=g)


def euler_transition_row(x: Sequence[int], pred: Predictor, t_k: float, eta: float,
                         T: float) -> np.ndarray:
    """Per-coordinate one-step kernels, shape ``(d, S)``.

    Masked coordinates move to token ``a`` w.p. ``eta * score`` at forward time
    ``T - t_k`` and stay masked otherwise; unmasked coordinates are frozen.
    """
    vocab = pred.vocab
    x = vocab.validate(x)
    if eta <= 0:
        raise ValueError("step size must be positive")
    K = np.zeros((vocab.d, vocab.S))
    K[np.arange(vocab.d), x] = 1.0
    u = T - t_k
    for i in masked_coords(x, vocab):
        move = eta * pred.scores(x, i, u)
        stay = 1.0 - move.sum()
        if stay < -1e-12:
            raise StepTooLarge(
                f"stay probability {stay:.3g} < 0 at coordinate {i} of {x} (eta={eta}, t={t_k})",
                state=x,
            )
        K[i] = move
        K[i, vocab.mask_id] = max(stay, 0.0)
    return K


def _kernel_targets(vocab: Vocab, code: int, x: tuple, K: np.ndarray):
    """Destination indices and probabilities of the product kernel from ``x``."""
    mc = masked_coords(x, vocab)
    if not mc:
        return np.array([code]), np.array([1.0])
    base = code - sum(vocab.mask_id * vocab.S**i for i in mc)
    probs = np.ones(())
    offs = np.zeros((), dtype=np.int64)
    for i in mc:
        probs = np.multiply.outer(probs, K[i])
        offs = np.add.outer(offs, np.arange(vocab.S) * vocab.S**i)
    return base + offs.reshape(-1), probs.reshape(-1)


def euler_exact_output(q_init: DenseDistribution | None, pred: Predictor,
                       sched: StepSchedule) -> DenseDistribution:
    """Push the full p.m.f. through every Euler step; returns ``p_{T - delta}``."""
    vocab = pred.vocab
    vocab.check_exact()
    if q_init is None:
        q_init = DenseDistribution.delta(vocab.all_mask(), vocab)
    p = np.array(q_init.probs)
    for k, (t, eta) in enumerate(zip(sched.grid[:-1], sched.steps)):
        new = np.zeros_like(p)
        for code in np.flatnonzero(p):
            x = decode(int(code), vocab)
            try:
                K = euler_transition_row(x, pred, float(t), float(eta), sched.T)
            except StepTooLarge as e:
                raise StepTooLarge(f"step {k}: {e}", step=k, state=x) from None
            dst, w = _kernel_targets(vocab, int(code), x, K)
            new[dst] += p[code] * w
        p = new
    return DenseDistribution(p, vocab, normalize=True, atol=1e-10)


def euler_sample_batch(q_init: DenseDistribution | None, pred: Predictor, sched: StepSchedule,
                       n: int, rng_seed=0) -> np.ndarray:
    """``n`` independent Euler trajectories; returns final states, shape ``(n, d)``."""
    vocab = pred.vocab
    rng = np.random.default_rng(rng_seed)
    if q_init is None:
        x = np.full((n, vocab.d), vocab.mask_id, dtype=np.int64)
    else:
        codes = rng.choice(vocab.n_states, size=n, p=q_init.probs)
        x = np.stack([(codes // vocab.S**i) % vocab.S for i in range(vocab.d)], axis=1)
    weights = vocab.S ** np.arange(vocab.d)
    for k, (t, eta) in enumerate(zip(sched.grid[:-1], sched.steps)):
        codes = x @ weights
        uniq, inv = np.unique(codes, return_inverse=True)
        cdf = np.empty((len(uniq), vocab.d, vocab.S))
        for j, code in enumerate(uniq):
            xs = decode(int(code), vocab)
            try:
                cdf[j] = np.cumsum(euler_transition_row(xs, pred, float(t), float(eta), sched.T), axis=1)
            except StepTooLarge as e:
                raise StepTooLarge(f"step {k}: {e}", step=k, state=xs) from None
        u = rng.random((n, vocab.d))
        x = np.minimum((u[..., None] >= cdf[inv]).sum(axis=-1), vocab.S - 1)
    return x


def euler_sample(q_init: DenseDistribution | None, pred: Predictor, sched: StepSchedule,
                 rng_seed=0) -> tuple[int, ...]:
    """One Euler trajectory endpoint."""
    return tuple(int(v) for v in euler_sample_batch(q_init, pred, sched, 1, rng_seed)[0])


@dataclass(frozen=True)
class FhsEvent:
    """One unmasking: forward time ``tau``, coordinate ``index``, value ``token``."""

    tau: float
    index: int
    token: int


def _next_alpha(alpha_prev, u, n):
    return 1.0 - u ** (1.0 / n) * (1.0 - alpha_prev)


def _tau(a):
    with np.errstate(divide="ignore"):
        return -np.log(a)


def fhs_sample(pred: Predictor, vocab: Vocab, rng_seed=0) -> tuple[tuple[int, ...], list[FhsEvent]]:
    """First-hitting sampler: exactly ``d`` unmasking events from the all-mask state."""
    rng = np.random.default_rng(rng_seed)
    x = list(vocab.all_mask())
    a_prev = 0.0
    events = []
    for n in range(vocab.d, 0, -1):
        u = rng.random()
        a_new = _next_alpha(a_prev, u, n)
        tau = float(_tau(a_new))
        mc = masked_coords(x, vocab)
        l = mc[int(rng.integers(len(mc)))]
        m = pred.mu(tuple(x), l, tau)
        z = int(rng.choice(vocab.S, p=m / m.sum()))
        x[l] = z
        events.append(FhsEvent(tau=tau, index=l, token=z))
        a_prev = a_new
    return tuple(x), events


def fhs_sample_batch(pred: Predictor, vocab: Vocab, n: int, rng_seed=0):
    """Vectorized FHS over ``n`` trials.

    Returns ``(states, alphas)``: final states ``(n, d)`` and
    ``alphas[:, j] = alpha(tau_j)`` for ``j = 0..d-1``.
    """
    rng = np.random.default_rng(rng_seed)
    d, S, M = vocab.d, vocab.S, vocab.mask_id
    x = np.full((n, d), M, dtype=np.int64)
    alphas = np.empty((n, d))
    a_prev = np.zeros(n)
    weights = S ** np.arange(d)
    rows = np.arange(n)
    for k in range(d, 0, -1):
        a_new = _next_alpha(a_prev, rng.random(n), k)
        alphas[:, k - 1] = a_new
        # pick the r-th masked coordinate, r uniform on {0..k-1}
        r = np.minimum((rng.random(n) * k).astype(np.int64), k - 1)
        masked = x == M
        order = np.cumsum(masked, axis=1) - 1
        l = np.argmax(masked & (order == r[:, None]), axis=1)
        u_tok = rng.random(n)
        codes = x @ weights
        if pred.time_independent:
            key = codes * d + l
            uniq, inv = np.unique(key, return_inverse=True)
            cdf = np.empty((len(uniq), S))
            for j, kk in enumerate(uniq):
                code, li = divmod(int(kk), d)
                m = pred.mu(decode(code, vocab), li)
                cdf[j] = np.cumsum(m / m.sum())
            z = (u_tok[:, None] >= cdf[inv]).sum(axis=1)
        else:
            taus = _tau(a_new)
            z = np.empty(n, dtype=np.int64)
            for row in range(n):
                m = pred.mu(decode(int(codes[row]), vocab), int(l[row]), float(taus[row]))
                z[row] = (u_tok[row] >= np.cumsum(m / m.sum())).sum()
        # float round-off can push z onto the mask id; clamp to the last token with mass
        x[rows, l] = np.minimum(z, S - 2)
        a_prev = a_new
    return x, alphas


def write_trajectory_log(events: Sequence[FhsEvent], path) -> None:
    """JSON lines, one unmasking event per line: ``step``, ``time``, ``index``, ``token``."""
    with open(path, "w") as fh:
        for k, e in enumerate(events):
            fh.write(json.dumps({"step": k, "time": e.tau, "index": e.index, "token": e.token}) + "\n")


def fhs_exact_output(pred: Predictor, vocab: Vocab) -> DenseDistribution:
    """Exact FHS output law for a time-independent predictor.

    Reveal order and times do not affect token draws, so the law follows from a
    sweep over partially revealed states: each masked coordinate is chosen
    with probability ``1/m`` and filled from ``mu``.
    """
    if not pred.time_independent:
        raise ValueError("exact FHS output needs a time-independent predictor; use fhs_sample_batch")
    vocab.check_exact()
    M = vocab.mask_id
    p = np.zeros(vocab.n_states)
    p[encode(vocab.all_mask(), vocab)] = 1.0
    for _ in range(vocab.d):
        new = np.zeros_like(p)
        for code in np.flatnonzero(p):
            x = decode(int(code), vocab)
            mc = masked_coords(x, vocab)
            share = p[code] / len(mc)
            for i in mc:
                m = pred.mu(x, i)
                base = code - M * vocab.S**i
                for a in np.flatnonzero(m):
                    new[base + a * vocab.S**i] += share * m[a]
        p = new
    return DenseDistribution(p, vocab, normalize=True, atol=1e-10)


def histogram(states: np.ndarray, vocab: Vocab) -> DenseDistribution:
    """Empirical distribution of sampled states (rows of token ids)."""
    codes = np.asarray(states) @ (vocab.S ** np.arange(vocab.d))
    counts = np.bincount(codes, minlength=vocab.n_states).astype(float)
    return DenseDistribution(counts, vocab, normalize=True)


def p_mask_product(T: float, gamma: float, grid: Sequence[float]) -> float:
    """Scalar product ``prod_k (1 - eta_k / (e^{T + gamma - t_k} - 1))`` over a grid."""
    g = np.asarray(grid, dtype=float)
    out = 1.0
    for t, eta in zip(g[:-1], np.diff(g)):
        out *= 1.0 - eta / math.expm1(T + gamma - t)
    return out
