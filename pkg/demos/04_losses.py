# %% [markdown]
# # Score entropy, NELBO and the first-hitting error
#
# For a clean-data law q0 and any predictor, the time-integrated score
# entropy equals the expected NELBO minus a data-only conditional-entropy
# term.  The same integral upper-bounds the KL error of the first-hitting
# sampler, with equality on a two-atom construction.

# %%
import math

import numpy as np

from maskdiff import (
    DenseDistribution,
    Vocab,
    exact_predictor,
    fhs_exact_output,
    integrated_score_entropy,
    kl,
    mixture_corrupted_predictor,
    prop2_identity_gap,
    random_distribution,
    rho_corrupted_predictor,
)

rng = np.random.default_rng(2)
vocab = Vocab(S=3, d=3)
q0 = random_distribution(vocab, rng)

for lam in (0.0, 0.1, 0.3):
    pred = mixture_corrupted_predictor(exact_predictor(q0), [0.5, 0.5], lam)
    r = prop2_identity_gap(q0, pred)
    k = kl(q0, fhs_exact_output(pred, vocab))
    print(f"lambda={lam}: int SE = {r['lse']:.6f}, E[NELBO] - H = {r['nelbo_mean'] - r['entropy_sum']:.6f}, "
          f"KL(q0 || FHS) = {k:.6f}")

# %% [markdown]
# Tight case: q0 = delta_a and a predictor that puts 1 - rho on a, rho on b.

# %%
eps = 0.3
for d in (1, 2, 3):
    v = Vocab(3, d)
    rho = -math.expm1(-eps / d)
    a, b = (0,) * d, (1,) * d
    pred = rho_corrupted_predictor(a, b, rho, v)
    q = DenseDistribution.delta(a, v)
    print(f"d={d}: KL = {kl(q, fhs_exact_output(pred, v)):.9f}, int SE = {integrated_score_entropy(q, pred):.9f}")
