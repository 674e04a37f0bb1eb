# %% [markdown]
# # The absorbing forward process
#
# Every token jumps to the mask at rate 1, so a clean token survives to time t
# with probability alpha(t) = exp(-t).  On a small state space we can hold the
# whole law q_t as a dense vector and check it three ways.

# %%
import math

import numpy as np

from maskdiff import (
    DenseDistribution,
    Vocab,
    build_forward_generator,
    clean_conditional,
    concrete_score,
    ctmc_propagate,
    init_tv_closed_form,
    marginal,
    random_distribution,
    tv,
)

rng = np.random.default_rng(0)
vocab = Vocab(S=3, d=3)  # tokens {0, 1}, mask id 2
q0 = random_distribution(vocab, rng)

# %% [markdown]
# Closed-form marginal (factorized kernel) vs. a generic uniformization solve of
# the Kolmogorov forward equation with the full 27 x 27 generator.

# %%
R = build_forward_generator(vocab)
for t in (0.1, 1.0, 3.0):
    gap = tv(marginal(q0, t), ctmc_propagate(q0, R, 0.0, t))
    print(f"t={t:>4}: tv(closed form, uniformization) = {gap:.1e}")

# %% [markdown]
# Concrete scores are ratios of neighbouring masses.  For the absorbing
# process they factor into a scalar times the clean conditional.

# %%
t = 0.7
x = (0, 2, 2)
for a in vocab.tokens:
    s = concrete_score(q0, x, 1, a, t)
    mu = clean_conditional(q0, x, 1)[a]
    print(f"score(x, 1, {a}) = {s:.6f}   alpha/(1-alpha) * mu = {math.exp(-t) / -math.expm1(-t) * mu:.6f}")

# %% [markdown]
# How far is q_T from the all-mask start?  Exactly
# 1 - sum q0(x0) (1 - e^-T)^(d - m(x0)), and never more than d e^-T.

# %%
start = DenseDistribution.delta(vocab.all_mask(), vocab)
for T in (1.0, 2.0, 4.0):
    print(f"T={T}: tv = {tv(marginal(q0, T), start):.6f}, closed form = {init_tv_closed_form(q0, T):.6f}, "
          f"bound = {vocab.d * math.exp(-T):.6f}")
