# %% [markdown]
# # Euler vs. first-hitting sampling
#
# Euler (tau-leaping) discretizes reverse time and pays an error that shrinks
# with the step size.  The first-hitting sampler (FHS) jumps straight to the
# next unmasking time and, with an exact predictor, has no discretization
# error at all.

# %%
import math

import numpy as np

from maskdiff import (
    Vocab,
    build_schedule,
    euler_exact_output,
    exact_predictor,
    fhs_exact_output,
    fhs_sample_batch,
    histogram,
    kl,
    marginal,
    random_distribution,
    tv,
)

rng = np.random.default_rng(1)
vocab = Vocab(S=3, d=3)
q0 = random_distribution(vocab, rng)
pred = exact_predictor(q0)

# %% [markdown]
# Euler with the decaying step rule eta_k = kappa * min(1, T - t_k).

# %%
T, delta = math.log(vocab.d / 0.01), 0.01 / vocab.d
q_delta = marginal(q0, delta)
for kappa in (0.2, 0.1, 0.05, 0.025):
    sched = build_schedule(T, delta, kappa)
    out = euler_exact_output(None, pred, sched)
    print(f"kappa={kappa:<6} N={sched.n_steps:>4}  tv(p, q_delta)={tv(out, q_delta):.5f}  tv(p, q0)={tv(out, q0):.5f}")

# %% [markdown]
# FHS: d steps, exact output law.

# %%
print("kl(q0 || FHS output) =", kl(q0, fhs_exact_output(pred, vocab)))
states, alphas = fhs_sample_batch(pred, vocab, 100_000, rng_seed=0)
print("tv(q0, 10^5-sample histogram) =", round(tv(q0, histogram(states, vocab)), 4))

# %% [markdown]
# The k-th unmasking happens at alpha(tau) ~ Beta(d - k + 1, k), whatever the
# predictor says about tokens.

# %%
d = vocab.d
for k in range(1, d + 1):
    print(f"k={k}: mean alpha = {alphas[:, k - 1].mean():.4f}   Beta mean = {(d - k + 1) / (d + 1):.4f}")
