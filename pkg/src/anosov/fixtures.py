"""Ready-made generator systems used by tests, demos and the CLI."""
from __future__ import annotations

import numpy as np

from .matgroup import GroupDescriptor, GroupElement
from .words import GeneratorSystem


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def hyperbolic(length: float, angle: float = 0.0) -> np.ndarray:
    """SL_2 element with translation length ``length`` (trace-form norm of mu is length/sqrt2)
    whose attracting line makes ``angle`` with the x-axis."""
    r = rotation(angle)
    return r @ np.diag([np.exp(length / 2), np.exp(-length / 2)]) @ r.T


def rank_one_schottky(length: float = 10.0, p: int = 2) -> GeneratorSystem:
    """p hyperbolic generators with evenly spread axes in SL_2(R).

    The attracting and repelling points of all generators are spaced pi/(2p)
    apart on the projective line.
    """
    gens = [GroupElement([hyperbolic(length, np.pi * i / (2 * p))]) for i in range(p)]
    return GeneratorSystem(gens)


def product_schottky(lengths=(6.0, 10.0)) -> GeneratorSystem:
    """Two generators (A, B) and (B, A) in SL_2 x SL_2.

    A and B are rank-one Schottky partners with different translation lengths,
    so the two factor representations are not conjugate.  The generating set
    is preserved by exchanging the factors, which puts the maximal growth
    direction on the diagonal.
    """
    a = hyperbolic(lengths[0], 0.0)
    b = hyperbolic(lengths[1], np.pi / 4)
    desc = GroupDescriptor((2, 2))
    return GeneratorSystem([GroupElement([a, b], desc), GroupElement([b, a], desc)])


def sl3_schottky(scale: float = 4.0, seed: int = 7) -> GeneratorSystem:
    """Two loxodromic elements of SL_3(R) conjugated by a fixed random rotation."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diagonal(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    a = np.diag(np.exp(scale * np.array([1.0, 0.2, -1.2])))
    b = q @ np.diag(np.exp(scale * np.array([1.1, -0.3, -0.8]))) @ q.T
    desc = GroupDescriptor((3,))
    return GeneratorSystem([GroupElement([a], desc), GroupElement([b], desc)])


FIXTURES = {
    "rank-one": rank_one_schottky,
    "product": product_schottky,
    "sl3": sl3_schottky,
}
