"""Quantiles of the limiting break-offset laws.

Two-sided Brownian motion with drift -|h|/2 gives the classical argmax law.
Doubling the noise scale gamma multiplies the law by gamma^2 = 4. Refining
the grid on the same paths shows how much of each quantile is discretization.
The random-walk regime, used when the signal stays bounded, lives on the
integers.

Run: python3 demos/limit_quantiles.py
"""

from commonbreak import LimitLawSpec, quantile_table

levels = (0.05, 0.25, 0.5, 0.75, 0.95)

for gamma in (1.0, 2.0):
    tab = quantile_table(LimitLawSpec("b", gamma, gamma), levels, 5_000, rng=1, threads=4)
    row = "  ".join(f"{a:.2f}:{q:+7.2f}" for a, q in tab.quantiles.items())
    print(f"Brownian argmax, gamma={gamma}: {row}")

coarse, fine = quantile_table(LimitLawSpec("b", 1.0, 1.0), levels, 5_000, rng=2, step=0.02, threads=4, refine=True)
for a in levels:
    print(f"  level {a:.2f}: grid 0.02 -> {coarse.quantiles[a]:+.3f}, grid 0.01 -> {fine.quantiles[a]:+.3f}")

walk = quantile_table(LimitLawSpec("c", c1_sq=1.0, gamma_L_star=1.0, gamma_R_star=1.0), levels, 5_000, rng=3, threads=4)
print("random-walk argmax, c^2=1, gamma*=1: " + "  ".join(f"{a:.2f}:{q:+.0f}" for a, q in walk.quantiles.items()))
