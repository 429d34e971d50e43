"""Symmetric pairs (G, H), generalized Cartan decompositions and counting regions.

Three kinds of involution are supported.

``compact`` on any product: sigma is the Cartan involution g -> g^{-T}, so
H = K, b = a and the decomposition is the KAK (singular value) decomposition.

``orthogonal(p, q)`` on SL_{p+q}: sigma(g) = J g^{-T} J with J = diag(I_p, -I_q),
so H = SO(p, q) and b = a.  With q = 0 this is the Cartan involution and H = K.

``swap`` on SL_n x SL_n: sigma(g1, g2) = (w g2 w^-1, w^-1 g1 w) with w the
longest Weyl element.  H is a twisted diagonal copy of SL_n and
b = {(x, i(x))} lies in the positive chamber of both factors.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.optimize import linprog

from .boundary import busemann, flag_pair
from .errors import (AmbiguityError, DecompositionError, InvalidInputError,
                     NumericalError, PreconditionError)
from .matgroup import (GroupDescriptor, GroupElement, LinearForm, _orthogonal_element,
                       cartan_batch, diag_exp, kak_decompose,
                       opposition_involution)

H_TOL = 1e-7
WALL_TOL = 1e-9
LOG2 = np.log(2.0)
PAIR_KINDS = ("compact", "orthogonal", "swap")


@dataclass(frozen=True)
class Multiplicity:
    root: np.ndarray
    plus: int
    minus: int


@dataclass
class SymmetricPair:
    """An involution of the group together with its b-subspace data.

    ``b_basis`` has trace-orthonormal columns spanning b inside the stored
    Cartan coordinates; ``multiplicities`` lists the positive restricted roots
    (as vectors in the stored coordinates) with the dimensions of the +1 and
    -1 eigenspaces of theta*sigma on their root spaces.
    """

    kind: str
    descriptor: GroupDescriptor
    J: np.ndarray | None = None
    w: np.ndarray | None = None
    p: int = 0
    q: int = 0
    b_basis: np.ndarray = field(init=False)
    multiplicities: list = field(init=False)

    def __post_init__(self):
        if self.kind not in PAIR_KINDS:
            raise InvalidInputError(f"unknown symmetric pair kind {self.kind!r}")
        if self.kind in ("orthogonal", "compact"):
            self.b_basis = self.descriptor.basis()
        else:
            d = self.descriptor.factor_dims[0]
            x_basis = GroupDescriptor((d,)).basis()
            cols = []
            for k in range(x_basis.shape[1]):
                x = x_basis[:, k]
                cols.append(np.concatenate([x, opposition_involution(x, GroupDescriptor((d,)))])
                            / np.sqrt(2.0))
            self.b_basis = np.column_stack(cols)
        self.multiplicities = _multiplicities(self)

    @property
    def r0(self) -> int:
        return self.b_basis.shape[1]

    # --- group level -----------------------------------------------------
    def sigma(self, g: GroupElement) -> GroupElement:
        if self.kind == "compact":
            return self.theta(g)
        if self.kind == "orthogonal":
            J = self.J
            m = J @ g.inverse_factors[0].T @ J
            mi = J @ g.factors[0].T @ J
            return GroupElement._trusted(g.descriptor, (m,), (mi,))
        w, wi = self.w, self.w.T
        g1, g2 = g.factors
        i1, i2 = g.inverse_factors
        return GroupElement._trusted(g.descriptor, (w @ g2 @ wi, wi @ g1 @ w),
                                     (w @ i2 @ wi, wi @ i1 @ w))

    def theta(self, g: GroupElement) -> GroupElement:
        return GroupElement._trusted(g.descriptor, tuple(m.T.copy() for m in g.inverse_factors),
                                     tuple(m.T.copy() for m in g.factors))

    def h_residual(self, h: GroupElement) -> float:
        """Frobenius distance between sigma(h) and h (per-factor maximum, relative, up to sign
        on projective factors)."""
        s = self.sigma(h)
        out = 0.0
        for a, b, proj in zip(s.factors, h.factors, h.descriptor.projective):
            diff = np.linalg.norm(a - b)
            if proj:
                diff = min(diff, np.linalg.norm(a + b))
            out = max(out, diff / max(1.0, np.linalg.norm(b)))
        return out

    # --- Lie algebra level -------------------------------------------------
    def dsigma(self, X: tuple) -> tuple:
        if self.kind == "compact":
            return tuple(-m.T for m in X)
        if self.kind == "orthogonal":
            return (-self.J @ X[0].T @ self.J,)
        w, wi = self.w, self.w.T
        return (w @ X[1] @ wi, wi @ X[0] @ w)

    def theta_sigma(self, X: tuple) -> tuple:
        s = self.dsigma(X)
        return tuple(-m.T for m in s)

    def random_h(self, rng: np.random.Generator, scale: float = 0.5) -> GroupElement:
        """exp of a random element of the fixed algebra of sigma."""
        X = tuple(_traceless(rng.normal(scale=scale, size=(d, d)))
                  for d in self.descriptor.factor_dims)
        S = self.dsigma(X)
        Y = tuple(0.5 * (a + b) for a, b in zip(X, S))
        mats = [expm(y) for y in Y]
        invs = [expm(-y) for y in Y]
        return GroupElement._trusted(self.descriptor, tuple(mats), tuple(invs))

    def embed(self, coords) -> np.ndarray:
        return self.b_basis @ np.asarray(coords, dtype=float)

    def coords(self, b) -> np.ndarray:
        return np.asarray(b, dtype=float) @ self.b_basis


def _traceless(x):
    return x - np.trace(x) / len(x) * np.eye(len(x))


def orthogonal_pair(p: int, q: int) -> SymmetricPair:
    if p < 1 or q < 0 or p + q < 2:
        raise InvalidInputError("orthogonal pair needs p >= 1, q >= 0 and p + q >= 2")
    J = np.diag(np.r_[np.ones(p), -np.ones(q)])
    return SymmetricPair("orthogonal", GroupDescriptor((p + q,)), J=J, p=p, q=q)


def compact_pair(desc: GroupDescriptor) -> SymmetricPair:
    """sigma = theta, so H = K and b = a."""
    return SymmetricPair("compact", desc)


def swap_pair(n: int = 2) -> SymmetricPair:
    desc = GroupDescriptor((n, n))
    return SymmetricPair("swap", desc, w=GroupDescriptor((n,)).w0()[0])


def pair_from_config(spec: dict | None, desc: GroupDescriptor) -> SymmetricPair | None:
    if spec is None:
        return None
    kind = spec.get("kind")
    if kind == "compact":
        pair = compact_pair(desc)
    elif kind == "swap":
        pair = swap_pair(desc.factor_dims[0])
    elif kind in ("orthogonal", "indefinite-orthogonal"):
        pair = orthogonal_pair(int(spec["p"]), int(spec.get("q", 0)))
    else:
        raise InvalidInputError(f"unknown symmetric pair kind {kind!r}")
    if pair.descriptor.factor_dims != desc.factor_dims:
        raise InvalidInputError("pair does not match the group of the generators")
    return pair


def _root_vector_matrix(desc, f, i, j):
    X = [np.zeros((d, d)) for d in desc.factor_dims]
    X[f][i, j] = 1.0
    return tuple(X)


def _multiplicities(pair: SymmetricPair) -> list:
    """Group the roots by their restriction to b and count theta*sigma eigenspaces."""
    desc = pair.descriptor
    P = pair.b_basis
    # a regular element of the positive b-chamber
    b0 = P @ np.linspace(1.0, 0.5, P.shape[1])
    b0 = desc.split(b0)
    b0 = np.concatenate([-np.sort(-x) for x in b0])
    b0 = P @ (P.T @ b0)
    roots = []
    for f, d in enumerate(desc.factor_dims):
        for i in range(d):
            for j in range(d):
                if i != j:
                    v = np.zeros(desc.dim)
                    v[desc.slices[f].start + i] = 1.0
                    v[desc.slices[f].start + j] = -1.0
                    roots.append(((f, i, j), P @ (P.T @ v)))
    groups: dict = {}
    for key, rest in roots:
        if np.linalg.norm(rest) < 1e-12 or rest @ b0 <= 0:
            continue
        tag = tuple(np.round(rest, 9))
        groups.setdefault(tag, []).append(key)
    out = []
    for tag, keys in groups.items():
        basis = [_root_vector_matrix(desc, *k) for k in keys]
        n = len(basis)
        M = np.zeros((n, n))
        flat = [np.concatenate([m.ravel() for m in b]) for b in basis]
        F = np.array(flat)
        for c, b in enumerate(basis):
            img = np.concatenate([m.ravel() for m in pair.theta_sigma(b)])
            M[:, c] = np.linalg.lstsq(F.T, img, rcond=None)[0]
        ev = np.linalg.eigvals(M).real
        out.append(Multiplicity(np.array(tag), int(np.sum(ev > 0)), int(np.sum(ev < 0))))
    return out


# ---------------------------------------------------------------------------
# generalized Cartan decomposition


@dataclass
class GCartan:
    h: GroupElement
    b: np.ndarray
    k: GroupElement
    residual: float


def _swap_core(g: GroupElement, pair: SymmetricPair):
    w, wi = pair.w, pair.w.T
    return w @ g.inverse_factors[1] @ wi @ g.factors[0], g.inverse_factors[0] @ w @ g.factors[1] @ wi


def h_cartan_projection(g: GroupElement, pair: SymmetricPair) -> np.ndarray:
    """b(g) with g in H exp(b) K, as its dominant (sorted) representative, embedded in a."""
    return h_cartan_batch(pair, [m[None] for m in g.factors],
                          [m[None] for m in g.inverse_factors])[0]


def h_cartan_batch(pair: SymmetricPair, mats, invs) -> np.ndarray:
    """Dominant b for stacks of elements; rows are embedded Cartan vectors."""
    if pair.kind == "compact":
        return cartan_batch(pair.descriptor, mats, invs)
    if pair.kind == "orthogonal":
        # X = sigma(g)^-1 g = J g^T J g has singular values e^{2b}
        J = pair.J
        x = J @ np.swapaxes(mats[0], 1, 2) @ J @ mats[0]
        xi = invs[0] @ J @ np.swapaxes(invs[0], 1, 2) @ J
        return 0.5 * cartan_batch(pair.descriptor, [x], [xi])
    w, wi = pair.w, pair.w.T
    # Y = w g2^-1 w^-1 g1 and its inverse, kept separately for accuracy
    y = w @ invs[1] @ wi @ mats[0]
    yi = invs[0] @ w @ mats[1] @ wi
    d = pair.descriptor.factor_dims[0]
    x = 0.5 * cartan_batch(GroupDescriptor((d,)), [y], [yi])
    ix = opposition_involution(x, GroupDescriptor((d,)))
    return np.concatenate([x, ix], axis=1)


def gcartan_decompose(g: GroupElement, pair: SymmetricPair) -> GCartan:
    """Split g = h exp(b) k with sigma(h) = h and k in K.

    Raises AmbiguityError when b lies on a wall of the restricted root system,
    DecompositionError when the recovered h misses H by more than 1e-7.
    """
    desc = g.descriptor
    if pair.kind == "compact":
        kak = kak_decompose(g)
        _check_regular(pair, kak.mu)
        h = g @ kak.k2.inverse() @ diag_exp(desc, -kak.mu)
        return GCartan(h, kak.mu, kak.k2, pair.h_residual(h))
    if pair.kind == "orthogonal":
        J = pair.J
        S = g.factors[0].T @ J @ g.factors[0]
        ev, V = np.linalg.eigh(0.5 * (S + S.T))
        pos = ev > 0
        if pos.sum() != pair.p:
            raise DecompositionError("signature of g^T J g does not match the pair")
        order = np.r_[np.flatnonzero(pos)[np.argsort(-ev[pos])],
                      np.flatnonzero(~pos)[np.argsort(ev[~pos])]]
        ev, V = ev[order], V[:, order]
        x = 0.5 * np.log(np.abs(ev))
        x -= x.mean()
        _check_regular(pair, x)
        k = V.T.copy()
        if np.linalg.det(k) < 0:
            k[-1] *= -1.0
        kk = _orthogonal_element(desc, [k])
        h = g @ kk.inverse() @ diag_exp(desc, -x)
        res = pair.h_residual(h)
        if res > H_TOL:
            raise DecompositionError(f"sigma(h) = h residual {res:.3g} exceeds {H_TOL}")
        return GCartan(h, x, kk, res)

    w, wi = pair.w, pair.w.T
    n = desc.factor_dims[0]
    y = w @ g.inverse_factors[1] @ wi @ g.factors[0]
    u, _, vt = np.linalg.svd(y)
    if np.linalg.det(u) < 0:
        u[:, -1] *= -1.0
        vt[-1] *= -1.0
    yi = g.inverse_factors[0] @ w @ g.factors[1] @ wi
    x = 0.5 * cartan_batch(GroupDescriptor((n,)), [y[None]], [yi[None]])[0]
    b = np.concatenate([x, opposition_involution(x, GroupDescriptor((n,)))])
    _check_regular(pair, b)
    best = None
    for signs in itertools.product((1.0, -1.0), repeat=n):
        m = np.diag(signs)
        if np.linalg.det(m) < 0:
            continue
        k1 = m @ vt
        k2 = wi @ m @ u.T @ w
        kk = _orthogonal_element(desc, [k1, k2])
        h = g @ kk.inverse() @ diag_exp(desc, -b)
        res = pair.h_residual(h)
        if best is None or res < best.residual:
            best = GCartan(h, b, kk, res)
    if best.residual > H_TOL:
        raise DecompositionError(f"sigma(h) = h residual {best.residual:.3g} exceeds {H_TOL}")
    return best


def _frames_det_fix(u, vt):
    flip = np.linalg.det(u) < 0
    u[flip, :, -1] *= -1.0
    vt[flip, -1, :] *= -1.0
    return u, vt


def _ambiguous_rows(pair: SymmetricPair, b: np.ndarray) -> np.ndarray:
    scale = np.maximum(1.0, np.abs(b).max(axis=1))
    bad = np.zeros(len(b), dtype=bool)
    for m in pair.multiplicities:
        bad |= np.abs(b @ m.root) < WALL_TOL * scale
    return bad


def gcartan_batch(pair: SymmetricPair, mats, invs):
    """Vectorized H exp(b) K splitting of a stack of elements.

    Returns ``(b, h, k, ambiguous)`` where ``h`` and ``k`` are lists of
    per-factor (n, d, d) stacks and ``ambiguous`` flags rows whose b lies on
    a wall (their h and k are one valid choice among many).
    """
    desc = pair.descriptor
    if pair.kind == "compact":
        b = cartan_batch(desc, mats, invs)
        hs, ks = [], []
        for m in mats:
            u, _, vt = np.linalg.svd(m)
            u, vt = _frames_det_fix(u, vt)
            hs.append(u)
            ks.append(vt)
        return b, hs, ks, _ambiguous_rows(pair, b)
    if pair.kind == "orthogonal":
        J = pair.J
        b = h_cartan_batch(pair, mats, invs)
        S = np.swapaxes(mats[0], 1, 2) @ J @ mats[0]
        ev, V = np.linalg.eigh(0.5 * (S + np.swapaxes(S, 1, 2)))
        # positive eigenvalues first (descending), then negative ones (ascending)
        order = np.lexsort((np.where(ev > 0, -ev, ev), ev <= 0), axis=1)
        ev = np.take_along_axis(ev, order, axis=1)
        V = np.take_along_axis(V, order[:, None, :], axis=2)
        x = 0.5 * np.log(np.abs(ev))
        x -= x.mean(axis=1, keepdims=True)
        k = np.swapaxes(V, 1, 2).copy()
        k[np.linalg.det(k) < 0, -1, :] *= -1.0
        h = mats[0] @ np.swapaxes(k, 1, 2) * np.exp(-x)[:, None, :]
        bad = _ambiguous_rows(pair, b) | ((ev > 0).sum(axis=1) != pair.p)
        # b is reported dominant; h and k belong to the eigen-ordered x
        return b, [h], [k], bad
    w, wi = pair.w, pair.w.T
    y = w @ invs[1] @ wi @ mats[0]
    b = h_cartan_batch(pair, mats, invs)
    u, _, vt = np.linalg.svd(y)
    u, vt = _frames_det_fix(u, vt)
    n = desc.factor_dims[0]
    x = b[:, :n]
    k1 = vt
    k2 = wi @ np.swapaxes(u, 1, 2) @ w
    h1 = mats[0] @ np.swapaxes(k1, 1, 2) * np.exp(-x)[:, None, :]
    h2 = wi @ h1 @ w
    return b, [h1, h2], [k1, k2], _ambiguous_rows(pair, b)


def _check_regular(pair: SymmetricPair, b: np.ndarray) -> None:
    for m in pair.multiplicities:
        if abs(m.root @ b) < WALL_TOL * max(1.0, np.abs(b).max()):
            raise AmbiguityError("b lies on a wall of the restricted root system")
    if pair.kind == "orthogonal":
        if np.min(np.abs(np.subtract.outer(b, b))[~np.eye(len(b), dtype=bool)]) < WALL_TOL:
            raise AmbiguityError("b has repeated coordinates")


def xi_density(b, pair: SymmetricPair) -> float:
    """prod over positive restricted roots of sinh(alpha(b))^l+ cosh(alpha(b))^l-."""
    b = np.asarray(b, dtype=float)
    out = 1.0
    for m in pair.multiplicities:
        a = float(m.root @ b)
        out *= np.sinh(a) ** m.plus * np.cosh(a) ** m.minus
    return out


def log_xi_bound_ratio(b, pair: SymmetricPair) -> float:
    """log(e^{-2 rho(b)} xi(b)) for dominant b, evaluated in log space."""
    b = np.asarray(b, dtype=float)
    out = -LinearForm.two_rho(pair.descriptor)(b)
    for m in pair.multiplicities:
        a = float(m.root @ b)
        if a <= 0:
            return -np.inf if m.plus else out
        e = np.exp(-2.0 * a)
        out += m.plus * (a + np.log1p(-e) - LOG2) + m.minus * (a + np.log1p(e) - LOG2)
    return float(out)


def skinning_weight(h0: GroupElement, p: GroupElement, theta: LinearForm,
                    pair: SymmetricPair | None = None, tol: float = H_TOL) -> float:
    """exp(Theta(beta_{h0+}(e, h0 p))) for p in H and P.

    p must be diagonal (H and P meet in (H cap M)(H cap A)) and, when a pair
    is given, fixed by sigma.
    """
    for m in p.factors:
        off = m - np.diag(np.diagonal(m))
        if np.abs(off).max() > tol * max(1.0, np.abs(m).max()):
            raise PreconditionError("p is not in H cap P: it is not diagonal")
    if pair is not None and pair.h_residual(p) > tol:
        raise PreconditionError("p is not in H cap P: sigma(p) != p")
    plus = flag_pair(h0)[0]
    beta = busemann(plus, h0.descriptor.identity(), h0 @ p)
    return float(np.exp(theta(beta)))


# ---------------------------------------------------------------------------
# counting regions


@dataclass
class RegionSpec:
    """Cone C = {x in b : A x >= 0} (rows of A in b-coordinates), with v and Theta.

    ``norm`` is the adapted norm on b (gram in b-coordinates).
    """

    A: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    gram: np.ndarray
    T: float = np.inf

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.v = np.asarray(self.v, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if np.any(self.A @ self.v <= 0):
            raise InvalidInputError("v is not in the interior of the cone")
        if len(self.v) > 1:
            res = linprog(self.theta, A_ub=-self.A, b_ub=np.zeros(len(self.A)),
                          A_eq=self.v[None], b_eq=[1.0], bounds=[(None, None)] * len(self.v))
            if res.status == 0 and res.fun <= 1e-12:
                raise InvalidInputError("the closed cone meets ker Theta away from 0")

    def norm(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.sqrt(np.einsum("...i,ij,...j->...", x, self.gram, x))


def region_interval(w, T: float, region: RegionSpec):
    """R_T(w) = {t : t v + sqrt(t) w in C, |t v + sqrt(t) w| < T} as (t_w, t_max), or None.

    The lower end is the first time the curve enters C: with a = A v > 0 and
    c = A w, row k holds iff sqrt(t) >= -c_k / a_k, which gives a closed form.
    """
    w = np.asarray(w, dtype=float)
    wn2 = float(region.norm(w) ** 2)
    upper = 0.5 * (-wn2 + np.sqrt(wn2 ** 2 + 4.0 * T * T))
    a = region.A @ region.v
    c = region.A @ w
    neg = c < 0
    t_w = float(np.max((c[neg] / a[neg]) ** 2)) if neg.any() else 0.0
    if t_w >= upper:
        return None
    return t_w, float(upper)


def dom_constant(theta0: float) -> float:
    t2 = np.tan(theta0) ** 2
    return 0.5 * (1.0 - (1.0 + 4.0 * (1.0 / t2 + 1.0 / t2 ** 2)) ** -0.5)


def dom_integral_check(delta: float, r: int, r0: int, w_norm: float, T: float,
                       theta0: float = np.pi / 4):
    """Quadrature of e^{-delta T} T^{(r-r0)/2} int_{R_T(w)} t^{(r0-r)/2} e^{delta t} dt.

    The region is the cone of half-angle ``theta0`` around v, so
    t_w = |w|^2 / tan^2(theta0).  Returns (numeric, limit, bound) where
    limit = e^{-delta |w|^2 / 2} / delta and bound = e^{-c delta |w|^2} / delta.

    For w = 0 and r - r0 >= 2 the integral diverges at t = 0; the lower end is
    then moved to t = 1.
    """
    if delta <= 0 or not (r >= r0 >= 1):
        raise InvalidInputError("need delta > 0 and r >= r0 >= 1")
    k = 0.5 * (r0 - r)
    t_w = w_norm ** 2 / np.tan(theta0) ** 2
    if t_w == 0.0 and r - r0 >= 2:
        t_w = 1.0
    upper = 0.5 * (-w_norm ** 2 + np.sqrt(w_norm ** 4 + 4.0 * T * T))
    if t_w >= upper:
        raise InvalidInputError("R_T(w) is empty for these parameters")
    lo = max(t_w - T, -60.0 / delta)
    hi = upper - T

    def integrand(s):
        return (1.0 + s / T) ** k * np.exp(delta * s)

    val, err = quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-10, limit=400,
                    points=[p for p in (-1.0 / delta, -5.0 / delta) if lo < p < hi] or None)
    if not np.isfinite(val) or err > 1e-6 * abs(val):
        raise NumericalError(f"quadrature did not converge (estimate {val}, error {err})")
    c = dom_constant(theta0)
    return (float(val), float(np.exp(-delta * w_norm ** 2 / 2) / delta),
            float(np.exp(-c * delta * w_norm ** 2) / delta))
