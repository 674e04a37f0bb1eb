"""Clean-token predictors and the concrete scores they induce.

A predictor returns ``mu(x, i, t)``, a categorical over non-mask tokens for a
masked coordinate ``i``.  Its score view is fixed by

    score(x, i, a, t) = alpha_t / (1 - alpha_t) * mu(x, i, t)[a]

so the two views can never drift apart.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .forward import alpha_inverse, clean_conditional, score_scale
from .state import DenseDistribution, Vocab, masked_coords


class Predictor:
    """Base class; subclasses implement :meth:`_mu`."""

    time_independent: bool = False

    def __init__(self, vocab: Vocab):
        self.vocab = vocab

    def _mu(self, x: tuple, i: int, t: float) -> np.ndarray:
        raise NotImplementedError

    def mu(self, x: Sequence[int], i: int, t: float = 1.0) -> np.ndarray:
        x = tuple(x)
        if x[i] != self.vocab.mask_id:
            raise ValueError(f"predictor queried at unmasked coordinate {i} of {x}")
        return self._mu(x, i, t)

    def scores(self, x: Sequence[int], i: int, t: float) -> np.ndarray:
        """All concrete scores ``s_t(x^{-i} (+)_i a, x)`` as a length-S vector."""
        return score_scale(t) * self.mu(x, i, t)

    def score(self, x: Sequence[int], i: int, a: int, t: float) -> float:
        return float(self.scores(x, i, t)[a])

    def spec(self) -> dict:
        raise NotImplementedError


class ExactPredictor(Predictor):
    """Predicts with the true clean conditional ``q_0^i(. | x^UM)``.

    Contexts with zero probability under ``q0`` never occur under exact
    dynamics, but corrupted samplers can reach them.  ``fallback="uniform"``
    answers those with the uniform law over non-mask tokens;
    ``fallback="raise"`` propagates the error.
    """

    time_independent = True

    def __init__(self, q0: DenseDistribution, fallback: str = "uniform"):
        super().__init__(q0.vocab)
        q0.vocab.check_exact()
        if fallback not in ("uniform", "raise"):
            raise ValueError("fallback must be 'uniform' or 'raise'")
        self.q0 = q0
        self.fallback = fallback
        self._cache: dict = {}

    def _mu(self, x, i, t):
        key = (x, i)
        hit = self._cache.get(key)
        if hit is None:
            try:
                hit = clean_conditional(self.q0, x, i)
            except ValueError:
                if self.fallback == "raise":
                    raise
                hit = np.full(self.vocab.S, 1.0 / (self.vocab.S - 1))
                hit[self.vocab.mask_id] = 0.0
            hit.setflags(write=False)
            self._cache[key] = hit
        return hit

    def spec(self):
        return {"kind": "exact"}


def exact_predictor(q0: DenseDistribution, fallback: str = "uniform") -> ExactPredictor:
    return ExactPredictor(q0, fallback)


class RhoCorruptedPredictor(Predictor):
    """Puts ``1 - rho`` on ``a^i`` and ``rho`` on ``b^i`` regardless of context."""

    time_independent = True

    def __init__(self, a: Sequence[int], b: Sequence[int], rho: float, vocab: Vocab):
        super().__init__(vocab)
        a, b = vocab.validate(a), vocab.validate(b)
        M = vocab.mask_id
        if M in a or M in b:
            raise ValueError("a and b must be mask-free")
        if any(ai == bi for ai, bi in zip(a, b)):
            raise ValueError("a and b must differ at every coordinate")
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        self.a, self.b, self.rho = a, b, float(rho)
        self._table = []
        for ai, bi in zip(a, b):
            m = np.zeros(vocab.S)
            m[ai], m[bi] = 1.0 - rho, rho
            m.setflags(write=False)
            self._table.append(m)

    def _mu(self, x, i, t):
        return self._table[i]

    def spec(self):
        return {"kind": "rho", "a": list(self.a), "b": list(self.b), "rho": self.rho}


def rho_corrupted_predictor(a, b, rho: float, vocab: Vocab) -> RhoCorruptedPredictor:
    return RhoCorruptedPredictor(a, b, rho, vocab)


class MixturePredictor(Predictor):
    """``(1 - lam) * base.mu + lam * noise`` with a context-free noise law."""

    def __init__(self, base: Predictor, noise, lam: float):
        super().__init__(base.vocab)
        if not 0.0 <= lam <= 1.0:
            raise ValueError("mixture weight must lie in [0, 1]")
        noise = np.asarray(noise, dtype=float)
        S = self.vocab.S
        if noise.shape == (S - 1,):
            noise = np.append(noise, 0.0)
        if noise.shape != (S,) or noise[-1] != 0 or np.any(noise < 0) or abs(noise.sum() - 1) > 1e-9:
            raise ValueError("noise must be a normalized categorical over non-mask tokens")
        self.base, self.noise, self.lam = base, noise, float(lam)
        self.time_independent = base.time_independent

    def _mu(self, x, i, t):
        return (1.0 - self.lam) * self.base._mu(x, i, t) + self.lam * self.noise

    def spec(self):
        return {"kind": "mixture", "lambda": self.lam, "noise": self.noise[:-1].tolist()}


def mixture_corrupted_predictor(base: Predictor, noise, lam: float) -> MixturePredictor:
    return MixturePredictor(base, noise, lam)


class FunctionPredictor(Predictor):
    """Wraps ``fn(x, i, t) -> length-S probability vector``; for synthetic tests."""

    def __init__(self, vocab: Vocab, fn: Callable, time_independent: bool = False):
        super().__init__(vocab)
        self.fn = fn
        self.time_independent = time_independent

    def _mu(self, x, i, t):
        m = np.asarray(self.fn(x, i, t), dtype=float)
        return m

    def spec(self):
        return {"kind": "function"}


def predictor_from_spec(spec: dict, q0: DenseDistribution) -> Predictor:
    """Build a predictor from its config form (``exact`` / ``rho`` / ``mixture``)."""
    kind = spec.get("kind")
    vocab = q0.vocab
    if kind == "exact":
        return ExactPredictor(q0)
    if kind == "rho":
        return RhoCorruptedPredictor(spec["a"], spec["b"], spec["rho"], vocab)
    if kind == "mixture":
        noise = spec.get("noise")
        if noise is None:
            noise = np.full(vocab.S - 1, 1.0 / (vocab.S - 1))
        base = predictor_from_spec(spec.get("base", {"kind": "exact"}), q0)
        return MixturePredictor(base, noise, spec["lambda"])
    raise ValueError(f"unknown predictor kind {kind!r}; expected exact, rho or mixture")


_GL_CACHE: dict = {}


def beta_nodes(a: float, b: float, n: int = 64):
    """Gauss-Legendre nodes on (0, 1) and weights folded with the Beta(a, b) density."""
    key = (a, b, n)
    if key not in _GL_CACHE:
        z, w = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (z + 1.0)
        _GL_CACHE[key] = (u, 0.5 * w * stats.beta.pdf(u, a, b))
    return _GL_CACHE[key]


def mu_bar(pred: Predictor, x: Sequence[int], n_nodes: int = 64) -> dict[int, np.ndarray]:
    """Beta-averaged log-predictor for every masked coordinate of ``x``.

    With ``k`` masks, ``log mu_bar = E[log mu(x, ., alpha^{-1}(A))]`` for
    ``A ~ Beta(d - k + 1, k)``.  The result is a geometric mean and need not sum
    to one.  Zero entries of ``mu`` stay zero.
    """
    vocab = pred.vocab
    x = vocab.validate(x)
    coords = masked_coords(x, vocab)
    k = len(coords)
    if k == 0:
        raise ValueError("mu_bar needs at least one masked coordinate")
    if pred.time_independent:
        return {i: np.array(pred.mu(x, i)) for i in coords}
    u, w = beta_nodes(vocab.d - k + 1, k, n_nodes)
    times = alpha_inverse(u)
    out = {}
    for i in coords:
        logs = np.zeros(vocab.S)
        dead = np.zeros(vocab.S, bool)
        for t, wt in zip(times, w):
            m = pred.mu(x, i, float(t))
            with np.errstate(divide="ignore"):
                lm = np.log(m)
            dead |= m == 0
            logs += wt * np.where(m > 0, lm, 0.0)
        out[i] = np.where(dead, 0.0, np.exp(logs))
    return out
