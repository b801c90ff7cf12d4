"""Sequential BIC search over multilinear-rank grids.

Plants a rank-(3,2,2) tensor, observes half of its cells with light noise,
and lets the sequential criterion pick the rank: the third-mode rank is tuned
against randomly drawn candidates for the other two, which are then re-tuned
in turn.
"""
import warnings

import numpy as np

from tmsm import FitConfig, tucker_reconstruct, tune_ranks

warnings.filterwarnings("ignore")
rng = np.random.default_rng(5)

n, t, k = 200, 8, 6
u1 = np.linalg.qr(rng.standard_normal((n, 3)))[0]
u2 = np.linalg.qr(rng.standard_normal((t, 2)))[0]
u3 = np.linalg.qr(rng.standard_normal((k, 2)))[0]
y_star = tucker_reconstruct(3 * rng.standard_normal((3, 2, 2)), u1, u2, u3)
mask = (rng.uniform(size=y_star.shape) < 0.5).astype(float)
noisy = (y_star + 0.01 * rng.standard_normal(y_star.shape)) * mask

grids = [[1, 3, 5, 7], [2, 4, 6], [2, 3, 6]]
print(f"planted rank (3, 2, 2); grids {grids[0]} x {grids[1]} x {grids[2]}")

config = FitConfig(rank=(3, 2, 2), max_iters=250, tol=1e-9, seed=5)
rank, table = tune_ranks(noisy, mask, mask, None, grids, config, sweeps=2)

print(f"selected rank: {rank}\n")
print("evaluated configurations (sorted by BIC):")
for r1, r2, r3, bic in sorted(table, key=lambda row: row[3])[:8]:
    marker = "  <- selected" if (r1, r2, r3) == rank else ""
    print(f"  ({r1},{r2},{r3})  BIC {bic:10.4f}{marker}")
