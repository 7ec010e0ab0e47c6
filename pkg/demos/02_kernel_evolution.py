"""Propagate location kernels through depth-100 attention-only stacks and
compare the signal-preserving constructions with softmax baselines.

Reproduces the qualitative picture: softmax attention with distance biases
(ALiBi) drives the normalised kernel to the all-ones matrix (rank collapse)
within a few dozen blocks, and post-norm placement does not save it, while
the exponential and uniform constructions hold their scheduled profiles and
the exponential one shows a recency bias. Saves a heatmap panel to
kernel_evolution.png.
"""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import spattn

T, L = 100, 100
DEPTHS = (5, 50, 100)


def config(method, alpha=0.0, norm="none", heads=8):
    beta = math.sqrt(1 - alpha**2) if alpha < 1.0 else 1.0
    return spattn.StackConfig(
        depth=L,
        seq_len=T,
        block=spattn.BlockSpec(
            method=method,
            heads=heads,
            shortcut_weight=alpha,
            residual_weight=beta,
            norm_placement=norm,
        ),
        gamma_final=0.005,
        rho_final=0.8,
        repeated_fraction=0.02,
        seed=0,
    )


rows = {
    "softmax+ALiBi, skipless": config("softmax_alibi"),
    "U-SPA, skipless": config("uspa"),
    "E-SPA, skipless": config("espa"),
    "value-skipinit, skipless": config("value_skipinit"),
    "softmax+ALiBi, post-norm": config("softmax_alibi", alpha=1.0, norm="post"),
    "softmax+ALiBi, pre-norm a=0.98": config("softmax_alibi", alpha=0.98, norm="pre"),
}

fig, axes = plt.subplots(len(rows), len(DEPTHS), figsize=(9, 2.6 * len(rows)))
print(f"{'configuration':<32}" + "".join(f"cos@{d:<6}" for d in DEPTHS))
for row, (label, cfg) in enumerate(rows.items()):
    trace = spattn.run_stack(cfg)
    cosines = [trace.metrics[d].mean_offdiag_cosine for d in DEPTHS]
    print(f"{label:<32}" + "".join(f"{c:<9.3f}" for c in cosines))
    for col, depth in enumerate(DEPTHS):
        ax = axes[row, col]
        ax.imshow(trace.normalized[depth], vmin=0, vmax=1, cmap="viridis")
        ax.set_xticks([])
        ax.set_yticks([])
        if row == 0:
            ax.set_title(f"block {depth}")
        if col == 0:
            ax.set_ylabel(label, fontsize=7)

fig.suptitle("normalised kernel matrices across depth")
fig.tight_layout()
fig.savefig("kernel_evolution.png", dpi=120)
print("\nwrote kernel_evolution.png")
print("mean off-diagonal cosine >= 0.95 marks rank collapse;")
print("the E-SPA row keeps cosine(lag k) = exp(-0.005 k), a recency bias.")
