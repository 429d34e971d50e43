# %% [markdown]
# # Atomic Patterson-Sullivan measures
#
# Put a weight e^{-s psi(mu(g))} on the attracting flag of every word g of
# length L, normalize, and compare the push-forward by a generator with the
# reweighting predicted by conformality.  The mismatch shrinks with L.

# %%
import numpy as np

from anosov import enumerate_ball
from anosov.boundary import conformality_residual, ps_atoms
from anosov.cone import poincare_abscissa
from anosov.fixtures import rank_one_schottky
from anosov.matgroup import LinearForm

gens = rank_one_schottky()
psi = LinearForm(np.array([1.0, -1.0]) / np.sqrt(2))
delta = poincare_abscissa(enumerate_ball(gens, 8))
s = 1.02 * delta
print("abscissa %.5f, using s = %.5f" % (delta, s))

# %%
table = enumerate_ball(gens, 6, with_flags=True)
atoms = ps_atoms(table, psi, s)
print(len(atoms), "atoms, total mass", atoms.weights.sum())
print("heaviest atoms:", np.sort(atoms.weights)[-4:])

# %% [markdown]
# Conformality residual for the letter a at increasing depth.

# %%
for depth in (6, 8, 10):
    print(depth, conformality_residual(gens, psi, depth, "a", s))
