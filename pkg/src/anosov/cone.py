"""Limit cones, growth indicators, tangent forms and adapted norms.

Directions in the positive Weyl chamber are handled through simplex
coordinates: the values of the simple roots, normalized to sum 1.  A
direction of a rank r group is then a point of the (r-1)-simplex.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import ConvexHull
from scipy.special import logsumexp

from .errors import (FitError, InsufficientDataError, InvalidInputError,
                     PreconditionError)
from .fitting import (count_series, default_window, fit_exponential_polynomial,
                      reliable_t_max, t_grid)
from .matgroup import GroupDescriptor, LinearForm, norms, opposition_involution

APERTURES = (0.2, 0.1, 0.05)
RESIDUAL_TOL = 0.35
FD_STEP = 0.02
SMOOTH_STEP = 0.05
BULK_FRACTION = 0.5


def simplex_coords(desc: GroupDescriptor, x) -> np.ndarray:
    """Normalized simple-root values of dominant vectors, shape (..., rank)."""
    a = np.asarray(x, dtype=float) @ desc.simple_roots().T
    s = a.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return a / s


def from_simplex(desc: GroupDescriptor, c) -> np.ndarray:
    """Unit (trace norm) vectors whose simplex coordinates are ``c``."""
    c = np.asarray(c, dtype=float)
    B = desc.basis()
    x = (B @ np.linalg.solve(desc.simple_roots() @ B, np.atleast_2d(c).T)).T
    x /= norms(x)[:, None]
    return x[0] if c.ndim == 1 else x


def simplex_grid(rank: int, n: int) -> np.ndarray:
    """Points of the (rank-1)-simplex with coordinates in multiples of 1/(n-1)."""
    if rank == 1:
        return np.ones((1, 1))
    m = n - 1
    pts = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            pts.append(prefix + [remaining])
            return
        for k in range(remaining + 1):
            rec(prefix + [k], remaining - k, slots - 1)

    rec([], m, rank)
    return np.array(pts, dtype=float)[::-1] / m


def direction_grid(desc: GroupDescriptor, n: int = 21) -> np.ndarray:
    return from_simplex(desc, simplex_grid(desc.rank, n))


# ---------------------------------------------------------------------------
# limit cone


def _monotone_chain(pts: np.ndarray) -> np.ndarray:
    pts = np.unique(pts, axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


@dataclass
class LimitConeEstimate:
    """Convex hull of normalized Jordan directions on the simplex slice.

    ``vertices`` are in full simplex coordinates (rows sum to 1).
    """

    descriptor: GroupDescriptor
    vertices: np.ndarray
    depth: int
    wall_margin: float
    n_points: int

    @property
    def interval(self) -> tuple[float, float]:
        """For rank 2, the range of the first simplex coordinate."""
        return float(self.vertices[:, 0].min()), float(self.vertices[:, 0].max())

    def outside_distance(self, c) -> np.ndarray:
        """Distance from simplex points to the hull (0 inside), in simplex coordinates.

        Exact for rank <= 2; for rank 3 it is the distance to the planar polygon.
        Higher ranks use the largest violated facet inequality.
        """
        c = np.atleast_2d(np.asarray(c, dtype=float))
        r = self.descriptor.rank
        if r == 1:
            return np.zeros(len(c))
        if r == 2:
            lo, hi = self.interval
            x = c[:, 0]
            return np.maximum(0.0, np.maximum(lo - x, x - hi))
        q = c[:, :-1]
        v = self.vertices[:, :-1]
        if r == 3 and len(v) >= 3:
            inside = np.ones(len(q), dtype=bool)
            dist = np.full(len(q), np.inf)
            for a, b in zip(v, np.roll(v, -1, axis=0)):
                e = b - a
                cr = e[0] * (q[:, 1] - a[1]) - e[1] * (q[:, 0] - a[0])
                inside &= cr >= -1e-12
                t = np.clip(((q - a) @ e) / (e @ e), 0.0, 1.0)
                dist = np.minimum(dist, np.linalg.norm(q - (a + t[:, None] * e), axis=1))
            return np.where(inside, 0.0, dist)
        if len(v) <= 2 or r == 3:
            # degenerate hull: distance to the segment or point
            if len(v) == 1:
                return np.linalg.norm(q - v[0], axis=1)
            a, b = v[0], v[-1]
            e = b - a
            t = np.clip(((q - a) @ e) / (e @ e), 0.0, 1.0)
            return np.linalg.norm(q - (a + t[:, None] * e), axis=1)
        hull = ConvexHull(v, qhull_options="QJ")
        viol = q @ hull.equations[:, :-1].T + hull.equations[:, -1]
        return np.maximum(0.0, viol.max(axis=1))

    def contains(self, c, tol: float = 1e-9) -> np.ndarray:
        return self.outside_distance(c) <= tol


def estimate_limit_cone(table, min_norm: float = 1e-6) -> LimitConeEstimate:
    """Hull of {lambda(gamma) / normalization : |lambda(gamma)| > min_norm}."""
    desc = table.descriptor
    r = desc.rank
    if table.depth < 2:
        raise InsufficientDataError("the limit cone needs a table of depth >= 2")
    lam = table.lam[norms(table.lam) > min_norm]
    if len(lam) < r + 1:
        raise InsufficientDataError(f"only {len(lam)} usable Jordan projections; need {r + 1}")
    c = simplex_coords(desc, lam)
    c = np.clip(c, 0.0, None)
    c /= c.sum(axis=1, keepdims=True)
    if r == 1:
        verts = np.ones((1, 1))
    elif r == 2:
        lo, hi = c[:, 0].min(), c[:, 0].max()
        verts = np.array([[lo, 1 - lo], [hi, 1 - hi]]) if hi > lo else np.array([[lo, 1 - lo]])
    elif r == 3:
        chain = _monotone_chain(c[:, :2])
        verts = np.column_stack([chain, 1 - chain.sum(axis=1)])
    else:
        try:
            hull = ConvexHull(c[:, :-1])
            verts = c[hull.vertices]
        except Exception:
            verts = np.unique(c, axis=0)
    est = LimitConeEstimate(desc, verts, table.depth, float(verts.min()), len(lam))
    if r <= 3 and np.any(est.outside_distance(c) > 1e-9):
        raise AssertionError("hull does not contain all sample points")
    return est


# ---------------------------------------------------------------------------
# growth indicator


def cone_sizes(mu: np.ndarray, mu_norms: np.ndarray, u: np.ndarray, aperture: float) -> np.ndarray:
    """Norms of the rows whose direction is within ``aperture`` radians of unit ``u``."""
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = (mu @ u) / mu_norms
    keep = (mu_norms > 0) & (cosang > np.cos(aperture))
    return mu_norms[keep]


@dataclass
class GrowthIndicatorEstimate:
    """psi-hat on a grid of unit directions, with per-aperture fits.

    ``evaluator`` maps a unit vector to psi-hat; it is used off the grid
    (tangent forms, refinement of the maximal growth direction).
    """

    descriptor: GroupDescriptor
    directions: np.ndarray
    values: np.ndarray
    apertures: tuple[float, ...]
    by_aperture: np.ndarray
    chosen_aperture: np.ndarray
    residuals: np.ndarray
    window: tuple[float, float]
    evaluator: Callable[[np.ndarray], float] = field(repr=False)
    diagnostics: list = field(default_factory=list)

    def at(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(self.evaluator(u / np.linalg.norm(u)))

    def __call__(self, x) -> float:
        """Homogeneous extension: psi(x) = |x| psi-hat(x / |x|)."""
        x = np.asarray(x, dtype=float)
        n = float(np.linalg.norm(x))
        if n == 0:
            return 0.0
        val = self.at(x / n)
        return n * val if np.isfinite(val) else val

    def simplex(self) -> np.ndarray:
        return simplex_coords(self.descriptor, self.directions)

    def records(self) -> list[dict]:
        out = []
        for i, u in enumerate(self.directions):
            out.append({"direction": u.tolist(), "psi": float(self.values[i]),
                        "aperture": float(self.chosen_aperture[i]),
                        "window": list(self.window), "residual": float(self.residuals[i]),
                        "by_aperture": self.by_aperture[i].tolist()})
        return out

    @classmethod
    def synthetic(cls, desc: GroupDescriptor, func: Callable[[np.ndarray], float],
                  directions: np.ndarray | None = None) -> "GrowthIndicatorEstimate":
        """Wrap a known function of unit vectors (for testing)."""
        if directions is None:
            directions = direction_grid(desc)
        vals = np.array([func(u) for u in directions])
        return cls(desc, directions, vals, (0.0,), vals[:, None], np.zeros(len(vals)),
                   np.zeros(len(vals)), (0.0, 0.0), func)


def _fit_direction(mu, mu_n, u, aperture, grid, window):
    sizes = cone_sizes(mu, mu_n, u, aperture)
    sizes = sizes[sizes <= window[1]]
    if sizes.size == 0 or not np.any(sizes >= window[0]):
        return -np.inf, np.nan, "empty cone in the fit window"
    rec = count_series(sizes, grid)
    try:
        fit = fit_exponential_polynomial(rec, window, fit_beta=False)
    except FitError as exc:
        return np.nan, np.nan, str(exc)
    return fit.delta, fit.rms, ""


def generator_norm_floor(table) -> float:
    one = table.lengths == 1
    if not one.any():
        raise InsufficientDataError("table has no words of length 1")
    return float(norms(table.mu[one]).min())


def poincare_abscissa(table, level: int | None = None,
                      norm: Callable | None = None) -> float:
    """Abscissa of convergence of sum_gamma exp(-s |mu(gamma)|), from word shells.

    With Z_n(s) the sum over words of length exactly n, the abscissa is the
    root of Z_n(s) = Z_{n-1}(s), taken at ``level`` (default the table depth).
    This uses word length rather than norm balls, so it is independent of the
    counting fits.
    """
    level = table.depth if level is None else int(level)
    if level < 2 or level > table.depth:
        raise InsufficientDataError(f"need 2 <= level <= depth, got {level}")
    sizes = norms(table.mu) if norm is None else norm(table.mu)
    top, below = sizes[table.lengths == level], sizes[table.lengths == level - 1]

    def gap(s):
        return logsumexp(-s * top) - logsumexp(-s * below)

    hi = 1.0
    while gap(hi) > 0:
        hi *= 2
        if hi > 1e6:
            raise FitError("Poincare shell sums do not decay")
    if gap(0.0) <= 0:
        raise FitError("word shells do not grow")
    return float(brentq(gap, 0.0, hi, xtol=1e-14))


def estimate_growth_indicator(table, grid: np.ndarray | None = None,
                              apertures: Sequence[float] = APERTURES,
                              window: tuple[float, float] | None = None,
                              residual_tol: float = RESIDUAL_TOL) -> GrowthIndicatorEstimate:
    """Fit the exponential growth rate of cone counts in every grid direction.

    For each aperture the count N(T) of rows with mu in the cone and |mu| <= T
    is fitted by log N = delta*T + c on the window (default
    [0.4 T_max, T_max] with T_max = 0.8 * depth * min generator norm).  The
    smallest aperture whose fit residual is below ``residual_tol`` gives the
    value; all apertures are kept in ``by_aperture``.  A cone with no rows in
    the window gets -inf.
    """
    desc = table.descriptor
    if grid is None:
        grid = direction_grid(desc)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    grid = grid / norms(grid)[:, None]
    apertures = tuple(sorted(apertures, reverse=True))
    if window is None:
        window = default_window(reliable_t_max(table.depth, generator_norm_floor(table)))
    tg = t_grid(window[1])
    mu = table.mu
    mu_n = norms(mu)
    vals = np.full(len(grid), np.nan)
    by_ap = np.full((len(grid), len(apertures)), np.nan)
    chosen = np.full(len(grid), np.nan)
    res = np.full(len(grid), np.nan)
    diags = []
    for i, u in enumerate(grid):
        for j, ap in enumerate(apertures):
            d, rms, msg = _fit_direction(mu, mu_n, u, ap, tg, window)
            by_ap[i, j] = d
            if msg:
                diags.append({"direction": i, "aperture": ap, "message": msg})
            if np.isfinite(d) and rms <= residual_tol:
                vals[i], chosen[i], res[i] = d, ap, rms
        if np.isnan(vals[i]):
            finite = by_ap[i][np.isfinite(by_ap[i])]
            if np.all(by_ap[i] == -np.inf):
                vals[i] = -np.inf
            elif finite.size:
                # every fit is noisy; report the widest aperture's value
                j = int(np.flatnonzero(np.isfinite(by_ap[i]))[0])
                vals[i], chosen[i] = by_ap[i, j], apertures[j]
    used = chosen[np.isfinite(chosen)]
    eval_ap = float(np.median(used)) if used.size else apertures[0]
    eval_ap = min(apertures, key=lambda a: abs(a - eval_ap))
    cache: dict = {}

    def evaluator(u):
        key = tuple(np.round(u, 12))
        if key not in cache:
            cache[key] = _fit_direction(mu, mu_n, np.asarray(u), eval_ap, tg, window)[0]
        return cache[key]

    return GrowthIndicatorEstimate(desc, grid, vals, apertures, by_ap, chosen, res,
                                   tuple(window), evaluator, diags)


def maximal_growth_direction(est: GrowthIndicatorEstimate, iterations: int = 30):
    """Grid argmax of psi-hat refined by golden-section search; returns (u, delta)."""
    vals = np.where(np.isfinite(est.values), est.values, -np.inf)
    if not np.any(np.isfinite(vals)):
        raise InsufficientDataError("psi-hat is -inf or undefined on the whole grid")
    desc = est.descriptor
    best = int(np.argmax(vals))
    if desc.rank == 1:
        return est.directions[best], float(vals[best])
    c0 = simplex_coords(desc, est.directions[best])
    cs = est.simplex()
    spacing = np.min([np.abs(a - c0).max() for a in cs if np.abs(a - c0).max() > 1e-12])

    def f(c):
        c = np.clip(c, 0.0, None)
        if c.sum() <= 0:
            return -np.inf
        val = est.at(from_simplex(desc, c / c.sum()))
        return val if np.isfinite(val) else -np.inf

    c = c0.copy()
    g = (np.sqrt(5.0) - 1) / 2
    for _ in range(2 if desc.rank > 2 else 1):
        for k in range(desc.rank - 1):
            def line(t, k=k, base=c.copy()):
                cc = base.copy()
                cc[k] += t
                cc[-1] -= t
                return f(cc)

            a, b = -spacing, spacing
            x1, x2 = b - g * (b - a), a + g * (b - a)
            f1, f2 = line(x1), line(x2)
            for _ in range(iterations):
                if f1 < f2:
                    a, x1, f1 = x1, x2, f2
                    x2 = a + g * (b - a)
                    f2 = line(x2)
                else:
                    b, x2, f2 = x2, x1, f1
                    x1 = b - g * (b - a)
                    f1 = line(x1)
            t = 0.5 * (a + b)
            if line(t) > f(c):
                c[k] += t
                c[-1] -= t
    val = f(c)
    if val < vals[best]:
        return est.directions[best], float(vals[best])
    c = np.clip(c, 0.0, None)
    return from_simplex(desc, c / c.sum()), float(val)


@dataclass
class TangentForm:
    theta: LinearForm
    v: np.ndarray
    gradient: np.ndarray
    value: float
    slack: float
    step: float


def _monomials(c: np.ndarray, degree: int) -> np.ndarray:
    cols = [np.ones(len(c))]
    for k in range(1, degree + 1):
        for idx in itertools.combinations_with_replacement(range(c.shape[1]), k):
            cols.append(np.prod(c[:, list(idx)], axis=1))
    return np.column_stack(cols)


def psi_surrogate(est: GrowthIndicatorEstimate, degree: int = 2,
                  fraction: float = BULK_FRACTION) -> Callable[[np.ndarray], float] | None:
    """Least-squares polynomial in simplex coordinates through the bulk of psi-hat.

    The bulk is the set of grid directions with psi-hat >= ``fraction`` times
    its maximum.  Returns the homogeneous extension x -> |x| p(c(x)), or None
    when the bulk has too few points for the requested degree.
    """
    desc = est.descriptor
    if desc.rank < 2:
        return None
    vals = est.values
    fin = np.isfinite(vals)
    if not fin.any():
        return None
    bulk = fin & (vals >= fraction * vals[fin].max())
    c = est.simplex()[bulk][:, :-1]
    X = _monomials(c, degree)
    if bulk.sum() < X.shape[1]:
        return None
    coef = np.linalg.lstsq(X, vals[bulk], rcond=None)[0]

    def f(x):
        x = np.asarray(x, dtype=float)
        n = float(np.linalg.norm(x))
        cc = simplex_coords(desc, x / n)[None, :-1]
        return n * float((_monomials(cc, degree) @ coef)[0])

    return f


def tangent_form(est: GrowthIndicatorEstimate, v, h: float | None = None, cone=None,
                 margin: float | None = None, smooth: bool = True) -> TangentForm:
    """Gradient of the homogeneous extension of psi-hat at v, as a linear form.

    With ``smooth`` (the default) the gradient is taken of a quadratic
    surrogate fitted to the bulk of the grid values (see ``psi_surrogate``);
    raw cone counts are step functions and their finite differences are
    dominated by noise.  Without it, central differences of psi-hat itself
    with step ``h``, improved by one Richardson halving.  ``slack`` is the
    minimum over the finite grid values of Theta(u) - psi-hat(u).
    """
    desc = est.descriptor
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    func = psi_surrogate(est) if smooth else None
    if h is None:
        h = SMOOTH_STEP if func is not None else FD_STEP
    if func is None:
        func = est
    if cone is not None:
        c = simplex_coords(desc, v)
        need = h if margin is None else margin
        if desc.rank > 1 and (c.min() < need or not cone.contains(c, tol=0.0)):
            raise PreconditionError("v is too close to the boundary of the estimated cone")
    B = desc.basis()

    def grad(step):
        g = np.zeros(B.shape[1])
        for j in range(B.shape[1]):
            fp, fm = func(v + step * B[:, j]), func(v - step * B[:, j])
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise PreconditionError("psi-hat is not finite around v; v is too close to the "
                                        "boundary of the cone")
            g[j] = (fp - fm) / (2 * step)
        return g

    g = (4 * grad(h / 2) - grad(h)) / 3
    coeffs = B @ g
    theta = LinearForm(coeffs)
    fin = np.isfinite(est.values)
    slack = float(np.min(theta(est.directions[fin]) - est.values[fin])) if fin.any() else np.nan
    return TangentForm(theta, v, coeffs, float(est.at(v)), slack, h)


# ---------------------------------------------------------------------------
# adapted norm


@dataclass
class AdaptedNorm:
    """Inner product making v a unit vector orthogonal to ker Theta.

    ``basis`` holds trace-orthonormal columns spanning the space the norm
    lives on (the Cartan subspace or a subspace of it); ``gram`` is expressed
    in those coordinates.
    """

    gram: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    basis: np.ndarray

    def coords(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.basis

    def norm(self, x) -> np.ndarray:
        c = self.coords(x)
        return np.sqrt(np.einsum("...i,ij,...j->...", c, self.gram, c))

    def split(self, x):
        """Write x = t v + w with w in ker Theta; returns (t, w)."""
        x = np.asarray(x, dtype=float)
        t = (x @ self.theta) / (self.v @ self.theta)
        return t, x - np.multiply.outer(t, self.v)


def _restricted(theta: LinearForm | np.ndarray, v, basis):
    coeffs = theta.coeffs if isinstance(theta, LinearForm) else np.asarray(theta, dtype=float)
    th = basis.T @ coeffs
    vc = basis.T @ np.asarray(v, dtype=float)
    return th, vc


def adapted_norm(theta, v, basis: np.ndarray | None = None,
                 desc: GroupDescriptor | None = None) -> AdaptedNorm:
    if isinstance(theta, TangentForm):
        theta = theta.theta
    v = np.asarray(v, dtype=float)
    if basis is None:
        basis = desc.basis() if desc is not None else np.eye(len(v))
    th, vc = _restricted(theta, v, basis)
    tv = float(th @ vc)
    if np.allclose(th, 0.0):
        raise InvalidInputError("Theta vanishes on the space")
    if tv <= 0:
        raise InvalidInputError("Theta(v) must be positive")
    P = np.eye(len(vc)) - np.outer(vc, th) / tv
    gram = np.outer(th, th) / tv ** 2 + P.T @ P
    gram = 0.5 * (gram + gram.T)
    return AdaptedNorm(gram, basis @ vc, basis @ th, basis)


def s_v(theta, v, basis: np.ndarray | None = None, desc: GroupDescriptor | None = None) -> float:
    """|<v, n>| with n the unit trace-form normal of ker Theta (so 1/|det S_v|)."""
    if isinstance(theta, TangentForm):
        theta = theta.theta
    v = np.asarray(v, dtype=float)
    if basis is None:
        basis = desc.basis() if desc is not None else np.eye(len(v))
    th, vc = _restricted(theta, v, basis)
    if np.allclose(th, 0.0):
        raise InvalidInputError("Theta vanishes on the space")
    n = th / np.linalg.norm(th)
    return float(abs(vc @ n) / np.linalg.norm(vc))


def i_symmetric_pairs(est: GrowthIndicatorEstimate, tol: float = 1e-9):
    """Index pairs (j, k) of grid directions exchanged by the opposition involution."""
    iu = opposition_involution(est.directions, est.descriptor)
    out = []
    for j, u in enumerate(iu):
        d = np.linalg.norm(est.directions - u, axis=1)
        k = int(np.argmin(d))
        if d[k] < tol and j <= k:
            out.append((j, k))
    return out


def midpoint_concavity_violations(est: GrowthIndicatorEstimate, tol: float = 0.0):
    """Grid triples (j, k, m) where m is the midpoint direction and concavity fails by > tol."""
    dirs = est.directions
    out = []
    for j in range(len(dirs)):
        for k in range(j + 1, len(dirs)):
            mid = dirs[j] + dirs[k]
            n = np.linalg.norm(mid)
            if n < 1e-12:
                continue
            if not (np.isfinite(est.values[j]) and np.isfinite(est.values[k])):
                continue
            lhs = est(0.5 * (dirs[j] + dirs[k]))
            rhs = 0.5 * (est.values[j] + est.values[k])
            if np.isfinite(lhs) and lhs < rhs - tol:
                out.append((j, k, float(rhs - lhs)))
    return out
