"""
Local valleys found by Gibbs sampling and by simulated quantum annealing
========================================================================

Each sampled state is relaxed downhill to its local minimum. Distinct minima
label distinct local valleys, so two samplers can be compared by the valleys
each one reaches.
"""
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from rbmlv.inference import AnnealerConfig, annealer_sample
from rbmlv.model import RbmModel
from rbmlv.samplers import AnnealSchedule
from rbmlv.training import TrainingConfig, load_optdigits, train, train_test_split, write_sklearn_digits_csv
from rbmlv.valleys import default_edges, energy_histogram, overlap_stats, scan_lvs_from_samples, scan_lvs_from_seeds

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
digits = load_optdigits(write_sklearn_digits_csv(out / "digits.csv"))
train_set, _ = train_test_split(digits, 50, 10, seed=0)
cfg = TrainingConfig(epochs=150, checkpoints=())
model, _ = train(RbmModel.random(74, 24, 3, scale=0.01), train_set, cfg)

# Gibbs chains start at the training patterns; deeper chains wander further
gibbs = {kG: scan_lvs_from_seeds(model, train_set.patterns, kG, n_rpt=20, rng=kG, n_tp=len(train_set))
         for kG in (1, 100)}
for kG, cat in gibbs.items():
    print(f"Gibbs kG={kG:3d}: N_LV = {cat.n_lv} (N_LV/N_TP = {cat.normalized_n_lv():.2f})")

# the annealer path scales the model by sf, maps it to an Ising problem and
# anneals all units together from a random start
cfg = AnnealerConfig(sf=2.0, schedule=AnnealSchedule.sqa(500, trotter_slices=8), n_reads=1000)
samples, _ = annealer_sample(model, cfg, rng=0)
sqa = scan_lvs_from_samples(model, samples, n_tp=len(train_set))
print(f"SQA: N_LV = {sqa.n_lv}")

# %%
# Overlap: A is the share of annealer valleys that Gibbs never reached, and B
# the share of Gibbs valleys that the annealer missed.
for kG, cat in gibbs.items():
    rep = overlap_stats(sqa, cat)
    print(f"kG={kG:3d}: shared {rep.shared}, A = {100 * rep.missed_by_b:.1f}%, B = {100 * rep.missed_by_a:.1f}%")

edges = default_edges([sqa, gibbs[1]], bins=30)
h_sqa = energy_histogram(sqa, gibbs[1], edges)
h_gib = energy_histogram(gibbs[1], sqa, edges)
fig, axes = plt.subplots(1, 2, figsize=(8, 3), sharex=True)
for ax, h, name in zip(axes, (h_sqa, h_gib), ("SQA", "Gibbs kG=1")):
    w = np.diff(h.bin_edges)
    ax.bar(h.bin_edges[:-1], h.counts_all, w, align="edge", color="0.75", label="all")
    ax.bar(h.bin_edges[:-1], h.counts_shared, w, align="edge", label="found by both")
    ax.set_title(name)
    ax.set_xlabel("local-minimum energy")
axes[0].set_ylabel("N_LV")
axes[0].legend()
fig.tight_layout()
fig.savefig(out / "lm_energy_histograms.png", dpi=100)
print(f"figure in {out}")
