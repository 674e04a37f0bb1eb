# %% [markdown]
# # Path-wise TV bound for a perturbed reverse chain
#
# Replace the true reverse rates with estimated ones and the terminal tv error
# is at most the initial tv plus the time-integrated expected L1 rate gap.
# Both sides are computed exactly here: the left by solving the Kolmogorov
# equation of the estimated chain, the right by quadrature.

# %%
import numpy as np

from maskdiff import Vocab, exact_predictor, mixture_corrupted_predictor, random_distribution, path_tv_sides

rng = np.random.default_rng(3)
vocab = Vocab(S=3, d=2)
q0 = random_distribution(vocab, rng)

for lam in (0.0, 0.05, 0.2):
    pred = mixture_corrupted_predictor(exact_predictor(q0), [0.8, 0.2], lam)
    for init in ("q_T", "all_mask"):
        r = path_tv_sides(q0, pred, T=2.5, delta=0.05, init=init)
        print(f"lambda={lam:<4} init={init:<8}  lhs={r['lhs']:.6f}  rhs={r['rhs']:.6f}  "
              f"(initial tv {r['init_tv']:.6f}, substeps {r['substeps']})")
