"""
Classify, fill in and imagine digits
====================================

One trained RBM serves three tasks through clamping: fix the pixels and read
the label, fix some pixels and complete the rest, or fix a label and let the
model produce matching images.
"""
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from rbmlv.inference import ClampMask, McmcConfig, classification_error, generate, reconstruct
from rbmlv.model import RbmModel
from rbmlv.training import TrainingConfig, load_optdigits, train, train_test_split, write_sklearn_digits_csv

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
digits = load_optdigits(write_sklearn_digits_csv(out / "digits.csv"))
train_set, test_set = train_test_split(digits, 1000, 300, seed=0)

cfg = TrainingConfig(epochs=100, weight_decay=0.0, checkpoints=())
model, _ = train(RbmModel.random(74, 74, 1, scale=0.01), train_set, cfg)

# classification: pixels clamped, label units vote over 100 sweeps after 400 of burn-in
err = classification_error(model, test_set, McmcConfig(), rng=0)
print(f"held-out classification error {err:.3f}")

# %%
# Reconstruction keeps 54% of the pixels and lets the chains fill in the rest.
rng = np.random.default_rng(2)
fig, axes = plt.subplots(3, 4, figsize=(6, 4.5))
for col in range(4):
    pattern = test_set.patterns[col]
    mask = ClampMask.random_pixels(pattern, 64, 0.54, rng)
    shown = np.where(mask.clamped[:64], pattern[:64], 0.5)
    filled = reconstruct(model, mask, McmcConfig(), rng)
    for row, img in enumerate((pattern[:64], shown, filled[:64])):
        axes[row, col].imshow(img.reshape(8, 8), cmap="gray_r", vmin=0, vmax=1)
        axes[row, col].axis("off")
for row, name in enumerate(("original", "clamped", "completed")):
    axes[row, 0].set_title(name, fontsize=8, loc="left")
fig.tight_layout()
fig.savefig(out / "reconstruction.png", dpi=100)

# %%
# Generation clamps one label unit and keeps the three lowest-energy images.
fig, axes = plt.subplots(3, 10, figsize=(10, 3.2))
for label in range(10):
    res = generate(model, label, McmcConfig(burn_in=400, n_chains=20), rng=label, top_k=3)
    for rank in range(3):
        ax = axes[rank, label]
        if rank < len(res.visibles):
            ax.imshow(res.visibles[rank][:64].reshape(8, 8), cmap="gray_r", vmin=0, vmax=1)
        ax.axis("off")
    axes[0, label].set_title(str(label))
fig.tight_layout()
fig.savefig(out / "generation.png", dpi=100)
print(f"figures in {out}")
