# %% [markdown]
# # Cartan projections and the limit cone
#
# A two-generator Schottky group in SL(2, R) x SL(2, R).  We enumerate the
# ball of reduced words, read off the Cartan and Jordan projections and look
# at where they point inside the positive Weyl chamber.

# %%
import numpy as np

from anosov import (cartan_projection, enumerate_ball, estimate_limit_cone, jordan_projection,
                    schottky_check)
from anosov.fixtures import product_schottky
from anosov.cone import simplex_coords

np.set_printoptions(precision=4, suppress=True)

gens = product_schottky()
print(gens.descriptor)
print(schottky_check(gens).verdict)

# %% [markdown]
# Each generator is a pair of hyperbolic 2x2 matrices.  mu is the vector of
# log singular values per factor, lambda the vector of log eigenvalue moduli.
# On SL(2) factors the opposition involution is trivial, so mu(a^-1) = mu(a).

# %%
a = gens.generators[0]
print("mu(a)     =", cartan_projection(a))
print("lambda(a) =", jordan_projection(a))
print("mu(a^-1)  =", cartan_projection(a.inverse()))

# %% [markdown]
# Enumerate all reduced words up to length 8.  Every row stores the word,
# mu and lambda of the product.

# %%
table = enumerate_ball(gens, 8)
print(len(table), "rows")
c = simplex_coords(gens.descriptor, table.mu[table.lengths == 8])
print("simplex coordinate of mu at length 8: min %.4f, max %.4f" % (c[:, 0].min(), c[:, 0].max()))

# %% [markdown]
# The limit cone is estimated from the Jordan projections.  In rank two it is
# an interval of simplex coordinates.

# %%
cone = estimate_limit_cone(table)
print("limit cone interval:", cone.interval)
print("wall margin:", cone.wall_margin)
