"""Sequences over a masked vocabulary, dense distributions on [S]^d, divergences.

States are encoded little-endian in mixed radix S: coordinate 0 is the least
significant digit, so ``index = sum(tokens[i] * S**i)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

#: Largest state space handled by exact (dense) operations.
MAX_EXACT_STATES = 2**24


class ExactSizeError(ValueError):
    """Raised when S**d exceeds the dense exact-mode limit."""


@dataclass(frozen=True)
class Vocab:
    """Vocabulary size ``S`` (mask token included) and sequence length ``d``."""

    S: int
    d: int

    def __post_init__(self):
        if int(self.S) != self.S or self.S < 2:
            raise ValueError(f"vocabulary size must be an integer >= 2, got {self.S}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"sequence length must be an integer >= 1, got {self.d}")

    @property
    def mask_id(self) -> int:
        return self.S - 1

    @property
    def n_states(self) -> int:
        return self.S**self.d

    @property
    def tokens(self) -> range:
        """Non-mask token ids."""
        return range(self.S - 1)

    def check_exact(self) -> None:
        if self.n_states > MAX_EXACT_STATES:
            raise ExactSizeError(
                f"S^d = {self.S}^{self.d} exceeds the exact-mode limit {MAX_EXACT_STATES}"
            )

    def all_mask(self) -> tuple[int, ...]:
        return (self.mask_id,) * self.d

    def validate(self, x: Sequence[int]) -> tuple[int, ...]:
        x = tuple(int(v) for v in x)
        if len(x) != self.d:
            raise ValueError(f"sequence has length {len(x)}, expected {self.d}")
        for v in x:
            if not 0 <= v < self.S:
                raise ValueError(f"token {v} out of range [0, {self.S})")
        return x


def encode(x: Sequence[int], vocab: Vocab) -> int:
    x = vocab.validate(x)
    idx = 0
    for v in reversed(x):
        idx = idx * vocab.S + v
    return idx


def decode(index: int, vocab: Vocab) -> tuple[int, ...]:
    if not 0 <= index < vocab.n_states:
        raise ValueError(f"index {index} out of range [0, {vocab.n_states})")
    out = []
    for _ in range(vocab.d):
        index, r = divmod(index, vocab.S)
        out.append(r)
    return tuple(out)


def all_states(vocab: Vocab) -> np.ndarray:
    """Array of shape (S**d, d); row ``k`` is ``decode(k)``."""
    vocab.check_exact()
    idx = np.arange(vocab.n_states)
    return np.stack([(idx // vocab.S**i) % vocab.S for i in range(vocab.d)], axis=1)


def hamming(x: Sequence[int], y: Sequence[int]) -> int:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    return sum(1 for a, b in zip(x, y) if a != b)


def mask_count(x: Sequence[int], vocab: Vocab) -> int:
    return sum(1 for v in x if v == vocab.mask_id)


def masked_coords(x: Sequence[int], vocab: Vocab) -> list[int]:
    return [i for i, v in enumerate(x) if v == vocab.mask_id]


def replace(x: Sequence[int], i: int, a: int) -> tuple[int, ...]:
    """``x^{-i} (+)_i a``: copy of ``x`` with coordinate ``i`` set to ``a``."""
    y = list(x)
    y[i] = a
    return tuple(y)


class DenseDistribution:
    """Exact p.m.f. over all S**d states, indexed by :func:`encode`.

    The probability vector is copied and made read-only.
    """

    def __init__(self, probs, vocab: Vocab, normalize: bool = False, atol: float = 1e-12):
        vocab.check_exact()
        p = np.array(probs, dtype=float).reshape(-1)
        if p.shape[0] != vocab.n_states:
            raise ValueError(f"expected {vocab.n_states} probabilities, got {p.shape[0]}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        total = p.sum()
        if normalize:
            if total <= 0:
                raise ValueError("cannot normalize a zero vector")
            p = p / total
        elif abs(total - 1.0) > atol:
            raise ValueError(f"probabilities sum to {total!r}, not 1 (tol {atol})")
        p.setflags(write=False)
        self.probs = p
        self.vocab = vocab

    def __repr__(self):
        return f"DenseDistribution(S={self.vocab.S}, d={self.vocab.d})"

    def __getitem__(self, x: Sequence[int]) -> float:
        return float(self.probs[encode(x, self.vocab)])

    def tensor(self) -> np.ndarray:
        """View with shape ``(S,)*d`` where axis ``i`` is coordinate ``i``."""
        return self.probs.reshape((self.vocab.S,) * self.vocab.d, order="F")

    @classmethod
    def from_tensor(cls, arr, vocab: Vocab, **kw) -> "DenseDistribution":
        return cls(np.asarray(arr).reshape(-1, order="F"), vocab, **kw)

    @classmethod
    def delta(cls, x: Sequence[int], vocab: Vocab) -> "DenseDistribution":
        p = np.zeros(vocab.n_states)
        p[encode(x, vocab)] = 1.0
        return cls(p, vocab)

    @classmethod
    def product(cls, factors, vocab: Vocab) -> "DenseDistribution":
        """Independent coordinates; ``factors`` is one length-S vector per coordinate
        (or a single vector used for every coordinate)."""
        factors = np.asarray(factors, dtype=float)
        if factors.ndim == 1:
            factors = np.tile(factors, (vocab.d, 1))
        if factors.shape != (vocab.d, vocab.S):
            raise ValueError(f"factors must have shape ({vocab.d}, {vocab.S})")
        t = np.ones(())
        for f in factors:
            t = np.multiply.outer(t, f / f.sum())
        # outer products put coordinate 0 on axis 0
        return cls.from_tensor(t, vocab, normalize=True)

    @classmethod
    def from_entries(cls, entries: Iterable, vocab: Vocab, **kw) -> "DenseDistribution":
        p = np.zeros(vocab.n_states)
        for tokens, w in entries:
            p[encode(tokens, vocab)] += w
        return cls(p, vocab, **kw)

    def support(self) -> list[tuple[int, ...]]:
        return [decode(int(k), self.vocab) for k in np.flatnonzero(self.probs)]

    def mask_mass(self) -> float:
        """Total probability of states containing at least one mask."""
        has_mask = (all_states(self.vocab) == self.vocab.mask_id).any(axis=1)
        return float(self.probs[has_mask].sum())

    def to_json(self) -> dict:
        return {"d": self.vocab.d, "S": self.vocab.S, "probs": self.probs.tolist()}


def load_distribution(path) -> DenseDistribution:
    """Read the dense or sparse JSON distribution format.

    Dense: ``{"d", "S", "probs": [S^d floats]}``; sparse:
    ``{"d", "S", "entries": [{"tokens": [...], "p": float}]}``.  The result is
    normalized; a total mass off by more than 1e-6 is an error.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"distribution file not found: {path}") from None
    return distribution_from_json(doc)


def distribution_from_json(doc: dict) -> DenseDistribution:
    vocab = Vocab(S=int(doc["S"]), d=int(doc["d"]))
    vocab.check_exact()
    if "probs" in doc:
        p = np.asarray(doc["probs"], dtype=float)
        if p.shape != (vocab.n_states,):
            raise ValueError(f"'probs' must hold {vocab.n_states} values")
    elif "entries" in doc:
        p = np.zeros(vocab.n_states)
        for e in doc["entries"]:
            p[encode(e["tokens"], vocab)] += float(e["p"])
    else:
        raise ValueError("distribution JSON needs 'probs' or 'entries'")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"total mass {p.sum()!r} deviates from 1 by more than 1e-6")
    return DenseDistribution(p, vocab, normalize=True)


def _check_same(p: DenseDistribution, q: DenseDistribution) -> None:
    if p.vocab != q.vocab:
        raise ValueError(f"vocab mismatch: {p.vocab} vs {q.vocab}")


def tv(p: DenseDistribution, q: DenseDistribution) -> float:
    _check_same(p, q)
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def kl(p: DenseDistribution, q: DenseDistribution) -> float:
    """KL(p || q) in nats; ``inf`` when p is not absolutely continuous w.r.t. q."""
    _check_same(p, q)
    on = p.probs > 0
    if np.any(q.probs[on] == 0):
        return math.inf
    pp, qq = p.probs[on], q.probs[on]
    return float(np.sum(pp * (np.log(pp) - np.log(qq))))


def entropy(p, atol: float = 1e-9) -> float:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > atol:
        raise ValueError("entropy needs a normalized categorical")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def random_distribution(vocab: Vocab, rng, mask_free: bool = True, concentration: float = 1.0,
                        sparsity: float = 0.0) -> DenseDistribution:
    """Dirichlet-random distribution, optionally restricted to mask-free states
    and with a random fraction ``sparsity`` of the remaining states zeroed."""
    states = all_states(vocab)
    allowed = ~(states == vocab.mask_id).any(axis=1) if mask_free else np.ones(len(states), bool)
    w = np.zeros(vocab.n_states)
    w[allowed] = rng.dirichlet(np.full(int(allowed.sum()), concentration))
    if sparsity > 0:
        keep = rng.random(vocab.n_states) >= sparsity
        if np.any(w * keep > 0):
            w = w * keep
    return DenseDistribution(w, vocab, normalize=True)
