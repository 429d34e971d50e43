"""Products of small real matrix groups and their Lie-theoretic projections.

A group is a product of factors SL_{d_i}(R) (or PSL when ``projective``).
Elements of the Cartan subspace are stored as plain float arrays holding the
diagonal coordinates of every factor back to back, so a vector for
SL_2 x SL_3 has five entries, the first two summing to zero and the last three
summing to zero.  The inner product is the trace form, which on these
coordinates is the ordinary dot product.

Every group element carries its inverse.  Products update both, so singular
values and eigenvalues at the bottom of the spectrum are read off the inverse
instead of being lost to cancellation in a badly conditioned product.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DecompositionError, InvalidInputError

MAX_FACTOR_DIM = 6
DET_TOL = 1e-9
WALL_TOL = 1e-12


@dataclass(frozen=True)
class GroupDescriptor:
    factor_dims: tuple[int, ...]
    projective: tuple[bool, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.factor_dims)
        if not dims:
            raise InvalidInputError("a group needs at least one factor")
        for d in dims:
            if d < 2 or d > MAX_FACTOR_DIM:
                raise InvalidInputError(f"factor dimension {d} outside [2, {MAX_FACTOR_DIM}]")
        proj = self.projective
        if proj is None:
            proj = tuple(d % 2 == 0 for d in dims)
        proj = tuple(bool(p) for p in proj)
        if len(proj) != len(dims):
            raise InvalidInputError("one projective flag per factor is required")
        object.__setattr__(self, "factor_dims", dims)
        object.__setattr__(self, "projective", proj)

    @property
    def rank(self) -> int:
        return sum(d - 1 for d in self.factor_dims)

    @property
    def dim(self) -> int:
        """Number of stored Cartan coordinates (sum of the factor dimensions)."""
        return sum(self.factor_dims)

    @property
    def slices(self) -> tuple[slice, ...]:
        out, start = [], 0
        for d in self.factor_dims:
            out.append(slice(start, start + d))
            start += d
        return tuple(out)

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return [x[..., s] for s in self.slices]

    def basis(self) -> np.ndarray:
        """Trace-orthonormal basis of the Cartan subspace, shape (dim, rank)."""
        cols = []
        for s, d in zip(self.slices, self.factor_dims):
            # Helmert-style orthonormal basis of the sum-zero hyperplane.
            for k in range(1, d):
                v = np.zeros(self.dim)
                v[s.start:s.start + k] = 1.0
                v[s.start + k] = -k
                cols.append(v / np.sqrt(k * (k + 1)))
        return np.column_stack(cols)

    def simple_roots(self) -> np.ndarray:
        """Simple roots as rows, shape (rank, dim); row i is e_i - e_{i+1} in a factor."""
        rows = []
        for s, d in zip(self.slices, self.factor_dims):
            for k in range(d - 1):
                row = np.zeros(self.dim)
                row[s.start + k] = 1.0
                row[s.start + k + 1] = -1.0
                rows.append(row)
        return np.array(rows)

    def positive_roots(self) -> list[tuple[int, int, int]]:
        """Positive roots as (factor, i, j) with i < j, i.e. e_i - e_j in that factor."""
        return [(f, i, j) for f, d in enumerate(self.factor_dims)
                for i in range(d) for j in range(i + 1, d)]

    def root_vector(self, root: tuple[int, int, int]) -> np.ndarray:
        f, i, j = root
        v = np.zeros(self.dim)
        start = self.slices[f].start
        v[start + i] = 1.0
        v[start + j] = -1.0
        return v

    def w0(self) -> tuple[np.ndarray, ...]:
        """Longest Weyl element per factor: reversal permutation made to have det +1."""
        out = []
        for d in self.factor_dims:
            w = np.fliplr(np.eye(d))
            if np.linalg.det(w) < 0:
                w[:, 0] *= -1.0
            out.append(w)
        return tuple(out)

    def identity(self) -> "GroupElement":
        mats = tuple(np.eye(d) for d in self.factor_dims)
        return GroupElement._trusted(self, mats, tuple(m.copy() for m in mats))

    def is_dominant(self, x, tol: float = 1e-9) -> bool:
        return bool(np.all(self.simple_roots() @ np.asarray(x, dtype=float) >= -tol))

    def check_vector(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise InvalidInputError(f"expected {self.dim} Cartan coordinates, got {x.shape[-1]}")
        return x


def opposition_involution(x, desc: GroupDescriptor) -> np.ndarray:
    """Per factor, reverse the coordinates and negate them."""
    x = desc.check_vector(x)
    out = np.empty_like(x)
    for s in desc.slices:
        out[..., s] = -x[..., s][..., ::-1]
    return out


def inner(desc: GroupDescriptor, v, w) -> float:
    v, w = desc.check_vector(v), desc.check_vector(w)
    return float(np.dot(v, w))


def norm(desc: GroupDescriptor, v) -> float:
    return float(np.sqrt(inner(desc, v, v)))


def norms(x) -> np.ndarray:
    """Row-wise trace norms of an (n, dim) array of Cartan vectors."""
    return np.sqrt(np.einsum("ij,ij->i", x, x))


@dataclass(frozen=True)
class LinearForm:
    """A linear form on the Cartan subspace, evaluated through the trace pairing."""

    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.coeffs

    def __add__(self, other: "LinearForm") -> "LinearForm":
        return LinearForm(self.coeffs + other.coeffs)

    def __mul__(self, s: float) -> "LinearForm":
        return LinearForm(self.coeffs * float(s))

    __rmul__ = __mul__

    def after_involution(self, desc: GroupDescriptor) -> "LinearForm":
        """The form x -> self(i(x)); i is self-adjoint for the trace form."""
        return LinearForm(opposition_involution(self.coeffs, desc))

    @classmethod
    def two_rho(cls, desc: GroupDescriptor) -> "LinearForm":
        coeffs = np.concatenate([np.arange(d - 1, -d, -2, dtype=float) for d in desc.factor_dims])
        return cls(coeffs)

    @classmethod
    def zero(cls, desc: GroupDescriptor) -> "LinearForm":
        return cls(np.zeros(desc.dim))


# ---------------------------------------------------------------------------
# group elements


def _canonical_sign(m: np.ndarray) -> float:
    idx = np.argmax(np.abs(m))
    return -1.0 if m.flat[idx] < 0 else 1.0


class GroupElement:
    """An element of a product of (P)SL groups, stored with its inverse.

    Parameters
    ----------
    factors : sequence of square arrays
        One matrix per simple factor.  Each is rescaled to ``|det| = 1``; a
        negative determinant is fixed by ``-1`` in odd dimension and rejected in
        even dimension.
    descriptor : GroupDescriptor, optional
        Inferred from the matrix shapes when omitted.
    inverse : sequence of arrays, optional
        Known inverse matrices.  Computed with ``numpy.linalg.inv`` otherwise.
    """

    __slots__ = ("descriptor", "factors", "inverse_factors")

    def __init__(self, factors: Sequence, descriptor: GroupDescriptor | None = None,
                 inverse: Sequence | None = None):
        mats = []
        for m in factors:
            m = np.array(m, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise InvalidInputError(f"factor of shape {m.shape} is not square")
            if not np.all(np.isfinite(m)):
                raise InvalidInputError("group element has non-finite entries")
            mats.append(m)
        if descriptor is None:
            descriptor = GroupDescriptor(tuple(m.shape[0] for m in mats))
        if tuple(m.shape[0] for m in mats) != descriptor.factor_dims:
            raise InvalidInputError("matrix shapes do not match the group descriptor")

        normalized, invs = [], []
        for i, (m, d, proj) in enumerate(zip(mats, descriptor.factor_dims, descriptor.projective)):
            det = np.linalg.det(m)
            if not np.isfinite(det) or abs(det) < 1e-300:
                raise InvalidInputError(f"factor {i} is singular")
            m = m / abs(det) ** (1.0 / d)
            scale = 1.0
            if det < 0:
                if d % 2 == 0:
                    raise InvalidInputError(
                        f"factor {i} has negative determinant in even dimension {d}")
                scale = -1.0
            m = scale * m
            if inverse is not None:
                inv = np.array(inverse[i], dtype=float) * abs(det) ** (1.0 / d) * scale
            else:
                inv = np.linalg.inv(m)
            if proj:
                s = _canonical_sign(m)
                m, inv = s * m, s * inv
            if abs(np.linalg.det(m) - 1.0) > DET_TOL:
                raise InvalidInputError(f"factor {i} could not be normalized to det 1")
            normalized.append(m)
            invs.append(inv)
        self.descriptor = descriptor
        self.factors = tuple(normalized)
        self.inverse_factors = tuple(invs)
        for m in self.factors + self.inverse_factors:
            m.setflags(write=False)

    @classmethod
    def _trusted(cls, desc, mats, invs) -> "GroupElement":
        g = object.__new__(cls)
        g.descriptor = desc
        fixed_m, fixed_i = [], []
        for m, inv, proj in zip(mats, invs, desc.projective):
            if proj:
                s = _canonical_sign(m)
                if s < 0:
                    m, inv = -m, -inv
            m.setflags(write=False)
            inv.setflags(write=False)
            fixed_m.append(m)
            fixed_i.append(inv)
        g.factors = tuple(fixed_m)
        g.inverse_factors = tuple(fixed_i)
        return g

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        if other.descriptor.factor_dims != self.descriptor.factor_dims:
            raise InvalidInputError("cannot multiply elements of different groups")
        mats = tuple(a @ b for a, b in zip(self.factors, other.factors))
        invs = tuple(b @ a for a, b in zip(self.inverse_factors, other.inverse_factors))
        return GroupElement._trusted(self.descriptor, mats, invs)

    def inverse(self) -> "GroupElement":
        return GroupElement._trusted(self.descriptor,
                                     tuple(m.copy() for m in self.inverse_factors),
                                     tuple(m.copy() for m in self.factors))

    def power(self, n: int) -> "GroupElement":
        base = self if n >= 0 else self.inverse()
        out = self.descriptor.identity()
        for _ in range(abs(n)):
            out = out @ base
        return out

    def allclose(self, other: "GroupElement", tol: float = 1e-9) -> bool:
        """Equality in the group (up to sign on projective factors)."""
        for a, b, proj in zip(self.factors, other.factors, self.descriptor.projective):
            scale = max(1.0, np.abs(a).max())
            if np.abs(a - b).max() <= tol * scale:
                continue
            if proj and np.abs(a + b).max() <= tol * scale:
                continue
            return False
        return True

    def __repr__(self):
        body = ", ".join(np.array2string(m, precision=4) for m in self.factors)
        return f"GroupElement({body})"


def element(*mats, projective=None) -> GroupElement:
    """Shorthand: ``element([[2, 1], [1, 1]])`` or ``element(a, b)`` for a product."""
    desc = GroupDescriptor(tuple(np.asarray(m).shape[0] for m in mats), projective)
    return GroupElement(mats, desc)


def diag_exp(desc: GroupDescriptor, x) -> GroupElement:
    """exp of a Cartan vector, as a group element."""
    x = desc.check_vector(x)
    parts = desc.split(x)
    mats = tuple(np.diag(np.exp(p)) for p in parts)
    invs = tuple(np.diag(np.exp(-p)) for p in parts)
    return GroupElement._trusted(desc, mats, invs)


# ---------------------------------------------------------------------------
# batched spectral kernels on stacks of shape (n, d, d)


def _exterior_power(m: np.ndarray, k: int) -> np.ndarray:
    d = m.shape[-1]
    combos = list(itertools.combinations(range(d), k))
    idx = np.array(combos)
    sub = m[:, idx[:, None, :, None], idx[None, :, None, :]]
    return np.linalg.det(sub)


def _log_top_singular(m: np.ndarray, k: int = 1) -> np.ndarray:
    if k > 1:
        m = _exterior_power(m, k)
    if m.shape[-1] == 2:
        a, b, c, d = m[:, 0, 0], m[:, 0, 1], m[:, 1, 0], m[:, 1, 1]
        top = 0.5 * (np.hypot(a + d, c - b) + np.hypot(a - d, b + c))
        return np.log(top)
    return np.log(np.linalg.norm(m, ord=2, axis=(1, 2)))


def _log_top_moduli(m: np.ndarray, k: int = 1) -> np.ndarray:
    if m.shape[-1] == 2 and k == 1:
        t = np.abs(m[:, 0, 0] + m[:, 1, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.where(t > 2.0, 1.0 - (2.0 / t) ** 2, 0.0)
        rho = np.where(t > 2.0, 0.5 * t * (1.0 + np.sqrt(np.clip(disc, 0.0, None))), 1.0)
        return np.log(rho)
    mod = np.sort(np.abs(np.linalg.eigvals(m)), axis=-1)[:, ::-1]
    return np.log(mod[:, :k]).sum(axis=-1)


def _partial_sums_to_coords(partial: list[np.ndarray], d: int) -> np.ndarray:
    n = partial[0].shape[0] if partial else 0
    p = np.zeros((n, d + 1))
    for k, v in enumerate(partial, start=1):
        p[:, k] = v
    coords = np.diff(p, axis=1)
    return -np.sort(-coords, axis=1)


def _projection_factor(m, minv, kernel) -> np.ndarray:
    d = m.shape[-1]
    partial = []
    for k in range(1, d):
        if 2 * k < d:
            partial.append(kernel(m, k))
        elif 2 * k > d:
            partial.append(kernel(minv, d - k))
        else:
            partial.append(0.5 * (kernel(m, k) + kernel(minv, k)))
    return _partial_sums_to_coords(partial, d)


def cartan_batch(desc: GroupDescriptor, mats: Sequence[np.ndarray],
                 invs: Sequence[np.ndarray]) -> np.ndarray:
    """Cartan projections of stacked elements; ``mats[f]`` has shape (n, d_f, d_f)."""
    return np.concatenate([_projection_factor(m, mi, _log_top_singular)
                           for m, mi in zip(mats, invs)], axis=1)


def jordan_batch(desc: GroupDescriptor, mats: Sequence[np.ndarray],
                 invs: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([_projection_factor(m, mi, _log_top_moduli)
                           for m, mi in zip(mats, invs)], axis=1)


def _stacks(g: GroupElement):
    return [m[None] for m in g.factors], [m[None] for m in g.inverse_factors]


def cartan_projection(g: GroupElement) -> np.ndarray:
    """Dominant vector mu(g) with g in K exp(mu(g)) K.

    Per factor these are the logarithms of the singular values in decreasing
    order.

    >>> cartan_projection(element([[2, 1], [1, 1]])).round(4)
    array([ 0.9624, -0.9624])
    """
    m, mi = _stacks(g)
    return cartan_batch(g.descriptor, m, mi)[0]


def jordan_projection(g: GroupElement) -> np.ndarray:
    """Dominant vector of log eigenvalue moduli, per factor in decreasing order."""
    m, mi = _stacks(g)
    return jordan_batch(g.descriptor, m, mi)[0]


def is_loxodromic(g: GroupElement, margin: float = 0.0) -> bool:
    if margin < 0:
        raise InvalidInputError("margin must be non-negative")
    lam = jordan_projection(g)
    for part in g.descriptor.split(lam):
        if np.any(-np.diff(part) <= margin):
            return False
    return True


class Iwasawa(NamedTuple):
    k: GroupElement
    a: np.ndarray
    n: GroupElement


class KAK(NamedTuple):
    k1: GroupElement
    mu: np.ndarray
    k2: GroupElement
    unique: bool


def _qr_positive(m: np.ndarray):
    q, r = np.linalg.qr(m)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    s = np.where(diag < 0, -1.0, 1.0)
    q = q * s[..., None, :]
    r = r * s[..., :, None]
    return q, r


def _orthogonal_element(desc, mats) -> GroupElement:
    return GroupElement._trusted(desc, tuple(mats), tuple(m.T.copy() for m in mats))


def iwasawa_decompose(g: GroupElement) -> Iwasawa:
    """Split g = k a n with k in SO(d), a positive diagonal, n upper unipotent."""
    desc = g.descriptor
    ks, logs, ns, ninvs = [], [], [], []
    for m in g.factors:
        q, r = _qr_positive(m)
        diag = np.diagonal(r)
        if diag.min() <= 1e-14 * diag.max():
            raise DecompositionError("matrix is numerically singular")
        n = r / diag[:, None]
        ks.append(q)
        logs.append(np.log(diag))
        ns.append(n)
        ninvs.append(np.linalg.inv(n))
    k = _orthogonal_element(desc, ks)
    n = GroupElement._trusted(desc, tuple(ns), tuple(ninvs))
    # |det| drift of the product is absorbed by projecting back to sum zero
    a = np.concatenate([x - x.mean() for x in logs])
    return Iwasawa(k, a, n)


def iwasawa_a_batch(mats: np.ndarray) -> np.ndarray:
    """log of the diagonal of R in the QR decomposition, for a stack (n, d, d)."""
    if mats.shape[-1] == 2:
        top = np.log(np.hypot(mats[:, 0, 0], mats[:, 1, 0]))
        return np.stack([top, -top], axis=1)
    r = np.linalg.qr(mats, mode="r")
    x = np.log(np.abs(np.diagonal(r, axis1=-2, axis2=-1)))
    return x - x.mean(axis=1, keepdims=True)


def kak_decompose(g: GroupElement) -> KAK:
    """Singular value decomposition g = k1 exp(mu) k2 with k1, k2 in SO(d).

    ``unique`` is False when some factor of ``mu`` has repeated coordinates;
    the returned ``k1``, ``k2`` are then one valid choice among many.
    """
    desc = g.descriptor
    k1s, k2s = [], []
    for m in g.factors:
        u, _, vt = np.linalg.svd(m)
        if np.linalg.det(u) < 0:
            u[:, -1] *= -1.0
            vt[-1, :] *= -1.0
        k1s.append(u)
        k2s.append(vt)
    mu = cartan_projection(g)
    unique = all(np.all(-np.diff(p) > 1e-9) for p in desc.split(mu))
    return KAK(_orthogonal_element(desc, k1s), mu, _orthogonal_element(desc, k2s), unique)


def recomposition_error(parts: Sequence[np.ndarray], target: GroupElement) -> float:
    """Largest relative Frobenius error between per-factor products and ``target``."""
    err = 0.0
    for p, m in zip(parts, target.factors):
        err = max(err, np.linalg.norm(p - m) / max(1.0, np.linalg.norm(m)))
    return err


def random_special_linear(desc: GroupDescriptor, rng: np.random.Generator,
                          scale: float = 1.0) -> GroupElement:
    """A random element: exp of a Gaussian traceless matrix per factor."""
    from scipy.linalg import expm

    mats = []
    for d in desc.factor_dims:
        x = rng.normal(scale=scale, size=(d, d))
        x -= np.trace(x) / d * np.eye(d)
        mats.append(expm(x))
    return GroupElement(mats, desc)


def random_orthogonal(desc: GroupDescriptor, rng: np.random.Generator) -> GroupElement:
    mats = []
    for d in desc.factor_dims:
        q, r = np.linalg.qr(rng.normal(size=(d, d)))
        q = q * np.sign(np.diagonal(r))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1.0
        mats.append(q)
    return _orthogonal_element(desc, mats)
