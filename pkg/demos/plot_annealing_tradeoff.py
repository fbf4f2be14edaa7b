"""
Longer anneals: fewer valleys, more ground states
=================================================

With an RBM small enough for an exact ground state, sweep the simulated
quantum annealer's schedule length and watch the ground-state probability
rise while the number of distinct valleys falls.
"""
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from rbmlv.embedding import rbm_ground_state
from rbmlv.model import RbmModel
from rbmlv.samplers import AnnealSchedule, sqa_sample
from rbmlv.training import TrainingConfig, load_optdigits, train, write_sklearn_digits_csv
from rbmlv.valleys import p_gs, scan_lvs_from_samples

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
digits = load_optdigits(write_sklearn_digits_csv(out / "digits.csv"))
nine = digits.subset(np.arange(9))

# 16 hidden units keep the exact ground state cheap: the hidden layer is
# enumerated and each visible unit then takes the sign of its field
cfg = TrainingConfig(epochs=500, batch_size=9, checkpoints=())
model, _ = train(RbmModel.random(74, 16, 1, scale=0.01), nine, cfg)
gs_energy, _ = rbm_ground_state(model)
print(f"ground-state energy {gs_energy:.4f}")

grid = [10, 100, 1000, 10000]
pgs, nlv = [], []
for sweeps in grid:
    samples = sqa_sample(model, AnnealSchedule.sqa(sweeps, T=0.05, trotter_slices=4), 300, rng=8)
    pgs.append(p_gs(samples, gs_energy))
    nlv.append(scan_lvs_from_samples(model, samples, len(nine)).n_lv)
    print(f"{sweeps:6d} sweeps: P_GS = {pgs[-1]:.3f}, N_LV = {nlv[-1]}")

fig, ax = plt.subplots(figsize=(5, 3))
ax.semilogx(grid, pgs, "o-", label="P_GS")
ax.set_xlabel("sweeps (annealing-time analog)")
ax.set_ylabel("P_GS")
ax2 = ax.twinx()
ax2.semilogx(grid, nlv, "s--", color="tab:red", label="N_LV")
ax2.set_ylabel("N_LV")
fig.tight_layout()
fig.savefig(out / "annealing_tradeoff.png", dpi=100)
print(f"figure in {out}")
