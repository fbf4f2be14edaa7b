"""
An RBM on 8x8 digits, from energy to samples
============================================

Train a small restricted Boltzmann machine on binarized digits, then check
block Gibbs sampling against the exact Boltzmann distribution of a model
small enough to enumerate.
"""
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from rbmlv.model import BoltzmannOracle, RbmModel
from rbmlv.samplers import gibbs_step
from rbmlv.training import TrainingConfig, load_optdigits, train, train_test_split, write_sklearn_digits_csv

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# scikit-learn ships the 8x8 digits; they are written out in the
# features-then-label CSV layout and binarized at half the maximum gray level
csv_path = write_sklearn_digits_csv(out / "digits.csv")
digits = load_optdigits(csv_path, resolution=8)
train_set, test_set = train_test_split(digits, 100, 100, seed=0)
print(f"{len(train_set)} training patterns of {train_set.patterns.shape[1]} bits (64 pixels + 10 labels)")

# CD-5 training; checkpoints keep copies of the model along the way
cfg = TrainingConfig(kG=5, learning_rate=0.05, epochs=200, batch_size=10, checkpoints=(10, 200))
model, trace = train(RbmModel.random(74, 32, 0, scale=0.01), train_set, cfg)
errs = [r.recon_error for r in trace.records]
print(f"reconstruction error {errs[0]:.3f} -> {errs[-1]:.3f}")

fig, ax = plt.subplots(figsize=(4, 3))
ax.plot(range(1, len(errs) + 1), errs)
ax.set_xlabel("epoch")
ax.set_ylabel("one-step reconstruction error")
fig.tight_layout()
fig.savefig(out / "training_curve.png", dpi=100)

# %%
# On a 4x3 model all 128 joint states can be listed, so a long Gibbs run can
# be compared with the exact distribution state by state.
tiny = RbmModel.random(4, 3, 7, scale=1.0)
exact = BoltzmannOracle(tiny).table
rng = np.random.default_rng(1)
v = rng.integers(0, 2, (500, 4), dtype=np.uint8)
weights = 1 << np.arange(7)
counts = np.zeros(128)
for step in range(600):
    v, h = gibbs_step(tiny, v, 1.0, rng)
    if step >= 100:
        counts += np.bincount(np.concatenate([v, h], axis=1) @ weights, minlength=128)
emp = counts / counts.sum()
print(f"total-variation distance after {int(counts.sum())} sweeps: {0.5 * np.abs(emp - exact).sum():.4f}")

fig, ax = plt.subplots(figsize=(4, 4))
ax.loglog(exact, emp, ".", ms=4)
ax.plot([exact.min(), exact.max()], [exact.min(), exact.max()], "k--", lw=0.8)
ax.set_xlabel("exact probability")
ax.set_ylabel("Gibbs frequency")
fig.tight_layout()
fig.savefig(out / "gibbs_vs_exact.png", dpi=100)
print(f"figures in {out}")
