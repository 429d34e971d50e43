# %% [markdown]
# # Growth indicator and directional counting
#
# psi-hat(u) is the exponential growth rate of orbit points whose Cartan
# projection points near the direction u.  Counting inside a cone around v
# with the norm adapted to the tangent form at v should grow at rate psi-hat(v).

# %%
import numpy as np

from anosov import enumerate_ball, estimate_growth_indicator
from anosov.cone import from_simplex, maximal_growth_direction, simplex_coords
from anosov.experiments import directional_count
from anosov.fixtures import product_schottky

np.set_printoptions(precision=4, suppress=True)

gens = product_schottky()
table = enumerate_ball(gens, 10)
est = estimate_growth_indicator(table)

# %% [markdown]
# Values on the direction grid; directions with no orbit points get -inf.
# Near the edges of the limit cone the wider apertures reach back into the
# cone, so those values are not reliable at this depth.

# %%
finite = np.isfinite(est.values)
for c, v in zip(simplex_coords(gens.descriptor, est.directions[finite])[:, 0], est.values[finite]):
    print(f"  c = {c:.3f}   psi-hat = {v:.4f}")
u, delta = maximal_growth_direction(est)
print("maximal growth direction", simplex_coords(gens.descriptor, u), "delta-hat", round(delta, 4))

# %% [markdown]
# Directional count around v = (0.47, 0.53) with the adapted norm.  The fit
# freezes the polynomial exponent at 0 and reports the exponential rate.

# %%
v = from_simplex(gens.descriptor, [0.47, 0.53])
res = directional_count(table, est, v)
print("aperture", res["aperture"])
print("fitted rate %.4f vs psi-hat(v) %.4f (gap %.1f%%)"
      % (res["fit"].delta, res["psi_hat"], 100 * res["relative_gap"]))
rec = res["record"]
for t, n in list(zip(rec.T, rec.N))[::100]:
    print(f"  T = {t:6.1f}   N = {n}")
