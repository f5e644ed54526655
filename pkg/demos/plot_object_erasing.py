"""
Locating and erasing the dominant attention region
==================================================

A spatial attention map is reduced to its row and column maxima, each is
min-max normalized, and the widest run above alpha that holds the peak is
kept on both axes.  The resulting rectangle is zeroed.
"""

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from srdl.erasing import erase, marginal_profiles, select_region

rng = np.random.default_rng(0)

# a soft blob on a noisy background, indexed [x, y]
x, y = np.meshgrid(np.arange(14), np.arange(14), indexing="ij")
sa = 0.3 * rng.random((14, 14)) + np.exp(-((x - 4) ** 2 + (y - 9) ** 2) / 6.0)

prof = marginal_profiles(sa)
for alpha in (0.3, 0.5, 0.8):
    print(alpha, select_region(sa, alpha))

region = select_region(sa, 0.5)
erased = erase(sa, region)

fig, axes = plt.subplots(1, 3, figsize=(10, 3))
axes[0].imshow(sa.T, origin="lower")
axes[0].set_title("attention")
axes[1].plot(prof.m_x, label="m_x")
axes[1].plot(prof.m_y, label="m_y")
axes[1].axhline(0.5, color="k", lw=0.5)
axes[1].legend()
axes[2].imshow(erased.T, origin="lower")
axes[2].set_title("erased")
fig.savefig("object_erasing.png", dpi=80)
print("wrote object_erasing.png")
