"""Flags, the Iwasawa cocycle, Busemann functions and boundary measures.

A point of the Furstenberg boundary G/P = K/M is stored as an orthogonal
frame per factor.  The frame is only defined up to the column signs (the group
M), so frames are kept in a canonical form where the first nonzero entry of
every column is positive.  The first i columns span the i-dimensional subspace
of the flag.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateMeasureError, InvalidInputError
from .matgroup import (GroupDescriptor, GroupElement, LinearForm, _qr_positive,
                       iwasawa_decompose, opposition_involution)

SIGN_TOL = 1e-12
GENERAL_POSITION_MARGIN = 1e-6


def canonicalize_frames(frames: np.ndarray) -> np.ndarray:
    """Flip column signs so the first entry above ``SIGN_TOL`` in every column is positive.

    Works on a single (d, d) frame or a stack (..., d, d).
    """
    frames = np.array(frames, dtype=float)
    big = np.abs(frames) > SIGN_TOL
    first = np.argmax(big, axis=-2)
    lead = np.take_along_axis(frames, first[..., None, :], axis=-2)[..., 0, :]
    signs = np.where(lead < 0, -1.0, 1.0)
    return frames * signs[..., None, :]


class Flag:
    """A point of the flag variety, one canonical orthogonal frame per factor."""

    __slots__ = ("descriptor", "frames")

    def __init__(self, frames: Sequence, descriptor: GroupDescriptor | None = None):
        mats = [np.array(f, dtype=float) for f in frames]
        if descriptor is None:
            descriptor = GroupDescriptor(tuple(m.shape[0] for m in mats))
        if tuple(m.shape[0] for m in mats) != descriptor.factor_dims:
            raise InvalidInputError("frame shapes do not match the group descriptor")
        for m in mats:
            if np.abs(m.T @ m - np.eye(m.shape[0])).max() > 1e-8:
                raise InvalidInputError("flag frame is not orthonormal")
        self.descriptor = descriptor
        self.frames = tuple(canonicalize_frames(m) for m in mats)
        for m in self.frames:
            m.setflags(write=False)

    @classmethod
    def base(cls, desc: GroupDescriptor) -> "Flag":
        """The standard flag e+ (coordinate subspaces in order)."""
        return cls([np.eye(d) for d in desc.factor_dims], desc)

    @classmethod
    def opposite_base(cls, desc: GroupDescriptor) -> "Flag":
        """The opposite flag e- = w0 e+."""
        return cls(desc.w0(), desc)

    @classmethod
    def from_flat(cls, flat: np.ndarray, desc: GroupDescriptor) -> "Flag":
        frames, start = [], 0
        for d in desc.factor_dims:
            frames.append(np.asarray(flat[start:start + d * d]).reshape(d, d))
            start += d * d
        return cls(frames, desc)

    def flat(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.frames])

    def act(self, g: GroupElement) -> "Flag":
        """The flag g . self."""
        return Flag([_qr_positive(m @ k)[0] for m, k in zip(g.factors, self.frames)],
                    self.descriptor)

    def allclose(self, other: "Flag", tol: float = 1e-9) -> bool:
        return all(np.abs(a - b).max() <= tol for a, b in zip(self.frames, other.frames))

    def __repr__(self):
        return f"Flag({', '.join(np.array2string(m, precision=4) for m in self.frames)})"


def flag_distance(xi: Flag, eta: Flag) -> float:
    """Largest principal angle between corresponding partial frames, max over levels."""
    return float(flag_distance_batch(xi.descriptor, xi.flat()[None], eta.flat()[None])[0])


def flag_distance_batch(desc: GroupDescriptor, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise flag distances between two stacks of flattened frames (broadcasting)."""
    a, b = np.broadcast_arrays(np.atleast_2d(a), np.atleast_2d(b))
    out = np.zeros(a.shape[0])
    start = 0
    for d in desc.factor_dims:
        fa = a[:, start:start + d * d].reshape(-1, d, d)
        fb = b[:, start:start + d * d].reshape(-1, d, d)
        start += d * d
        for i in range(1, d):
            # arctan2(sin, cos) of the largest angle stays accurate near 0 and pi/2
            c = np.swapaxes(fa[:, :, :i], 1, 2) @ fb[:, :, :i]
            cos = np.linalg.svd(c, compute_uv=False)[:, -1]
            resid = fb[:, :, :i] - fa[:, :, :i] @ c
            sin = np.linalg.svd(resid, compute_uv=False)[:, 0]
            out = np.maximum(out, np.arctan2(sin, cos))
    return out


def iwasawa_cocycle(g: GroupElement, xi: Flag) -> np.ndarray:
    """sigma(g, xi): the A-part of g k for any frame k representing xi."""
    parts = []
    for m, k in zip(g.factors, xi.frames):
        r = np.linalg.qr(m @ k, mode="r")
        x = np.log(np.abs(np.diagonal(r)))
        parts.append(x - x.mean())
    return np.concatenate(parts)


def iwasawa_cocycle_batch(desc: GroupDescriptor, g: GroupElement,
                          frames: np.ndarray) -> np.ndarray:
    """sigma(g, xi) for a stack of flattened frames, shape (n, sum d^2) -> (n, dim)."""
    frames = np.atleast_2d(frames)
    parts, start = [], 0
    for m, d in zip(g.factors, desc.factor_dims):
        k = frames[:, start:start + d * d].reshape(-1, d, d)
        start += d * d
        r = np.linalg.qr(m @ k, mode="r")
        x = np.log(np.abs(np.diagonal(r, axis1=-2, axis2=-1)))
        parts.append(x - x.mean(axis=1, keepdims=True))
    return np.concatenate(parts, axis=1)


def busemann(xi: Flag, g: GroupElement, h: GroupElement) -> np.ndarray:
    """beta_xi(g, h) = sigma(g^-1, xi) - sigma(h^-1, xi)."""
    return iwasawa_cocycle(g.inverse(), xi) - iwasawa_cocycle(h.inverse(), xi)


def flag_pair(g: GroupElement) -> tuple[Flag, Flag]:
    """(g+, g-) = (g P, g w0 P)."""
    desc = g.descriptor
    w0 = GroupElement(desc.w0(), desc)
    plus = Flag(iwasawa_decompose(g).k.factors, desc)
    minus = Flag(iwasawa_decompose(g @ w0).k.factors, desc)
    return plus, minus


def hopf(g: GroupElement) -> tuple[Flag, Flag, np.ndarray]:
    plus, minus = flag_pair(g)
    return plus, minus, busemann(minus, g.descriptor.identity(), g)


def in_general_position(xi: Flag, eta: Flag, margin: float = GENERAL_POSITION_MARGIN) -> bool:
    """True iff the flags are transverse with every pairing minor above ``margin``.

    Level i pairs the i-dimensional subspace of ``xi`` with the
    (d-i)-dimensional subspace of ``eta``: the first i columns of one frame
    against the first d-i columns of the other.
    """
    if margin < 0:
        raise InvalidInputError("margin must be non-negative")
    return bool(general_position_minors(xi, eta).min() > margin)


def general_position_minors(xi: Flag, eta: Flag) -> np.ndarray:
    out = []
    for a, b in zip(xi.frames, eta.frames):
        d = a.shape[0]
        for i in range(1, d):
            out.append(abs(np.linalg.det(np.hstack([a[:, :i], b[:, :d - i]]))))
    return np.array(out)


def bms_weight(g: GroupElement, psi1: LinearForm, psi2: LinearForm) -> float:
    """exp(psi1(beta_{g+}(e, g)) + psi2(beta_{g-}(e, g)))."""
    plus, minus = flag_pair(g)
    e = g.descriptor.identity()
    return float(np.exp(psi1(busemann(plus, e, g)) + psi2(busemann(minus, e, g))))


# ---------------------------------------------------------------------------
# atomic Patterson-Sullivan approximations


@dataclass(frozen=True)
class AtomicMeasure:
    descriptor: GroupDescriptor
    flags: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray
    rows: np.ndarray
    normalized: bool = True

    def __len__(self):
        return len(self.weights)

    def flag(self, i: int) -> Flag:
        return Flag.from_flat(self.flags[i], self.descriptor)

    def to_csv(self, path) -> None:
        header = ",".join([f"f{j}" for j in range(self.flags.shape[1])] + ["weight"])
        np.savetxt(path, np.column_stack([self.flags, self.weights]), delimiter=",",
                   header=header, comments="", fmt="%.17g")


def ps_atoms(table, psi: LinearForm, s: float, norm_floor: float = 1e-6,
             weight_scale: float = 1.0) -> AtomicMeasure:
    """Atoms at the attracting flags of the table rows, weights prop. to exp(-s psi(mu)).

    ``weight_scale`` multiplies every raw weight before normalization.  The
    raw weights are shifted by their maximum in log space and normalized in
    linear space, so a power-of-two scale leaves the result bit-identical.
    """
    if s <= 0:
        raise InvalidInputError("s must be positive")
    if weight_scale <= 0:
        raise InvalidInputError("weight_scale must be positive")
    if table.flags is None:
        raise InvalidInputError("table was enumerated without attracting flags")
    keep = np.flatnonzero(np.sqrt(np.einsum("ij,ij->i", table.mu, table.mu)) > norm_floor)
    if keep.size == 0:
        raise DegenerateMeasureError("no rows above the norm floor")
    logw = -s * psi(table.mu[keep])
    if not np.any(np.isfinite(logw)):
        raise DegenerateMeasureError("all atom weights underflow")
    raw = np.exp(logw - logw.max()) * weight_scale
    total = raw.sum()
    if not (np.isfinite(total) and total > 0):
        raise DegenerateMeasureError("atom weights underflow or overflow")
    weights = raw / total
    with np.errstate(divide="ignore"):
        return AtomicMeasure(table.descriptor, table.flags[keep], weights, np.log(weights), keep)


def _letter_after(gamma: Sequence[int], words: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """First letter of the reduced word gamma*u for every row u (0 for the identity)."""
    k = len(gamma)
    n = len(lengths)
    cancelled = np.zeros(n, dtype=int)
    alive = np.ones(n, dtype=bool)
    for j in range(min(k, words.shape[1])):
        can = alive & (lengths > j) & (words[:, j] == -gamma[k - 1 - j])
        cancelled += can
        alive = can
    out = np.zeros(n, dtype=int)
    partial = cancelled < k
    if k:
        out[partial] = gamma[0]
    full = ~partial
    rows = np.flatnonzero(full)
    has_more = lengths[rows] > cancelled[rows]
    rows = rows[has_more]
    out[rows] = words[rows, cancelled[rows]]
    return out


def conformality_report(table, gens, psi: LinearForm, gamma: Sequence[int], s: float,
                        norm_floor: float = 1e-6, weight_scale: float = 1.0) -> dict:
    """Compare gamma-pushforward cylinder masses with the conformal density prediction.

    Cylinders are the sets of atoms whose word starts with a given letter.  The
    pushforward of an atom u lands in the cylinder of the first letter of the
    reduced word gamma*u; the prediction integrates exp(s psi(beta_xi(e, gamma)))
    against the atoms of the cylinder.  Returns the maximal relative
    discrepancy, the per-cylinder masses and the letters of empty cylinders.
    """
    gamma = [int(a) for a in gamma]
    measure = ps_atoms(table, psi, s, norm_floor, weight_scale)
    words = table.words[measure.rows]
    lengths = table.lengths[measure.rows]
    g = gens.word_element(gamma)
    beta = -iwasawa_cocycle_batch(table.descriptor, g.inverse(), measure.flags)
    predicted = measure.weights * np.exp(s * psi(beta))
    target = _letter_after(gamma, words, lengths)
    first = words[:, 0]
    lhs, rhs, skipped = {}, {}, []
    for a in gens.letters():
        mask = first == a
        if not mask.any():
            skipped.append(a)
            continue
        lhs[a] = float(measure.weights[target == a].sum())
        rhs[a] = float(predicted[mask].sum())
    if not lhs:
        raise DegenerateMeasureError("every cylinder is empty")
    residual = max(abs(lhs[a] - rhs[a]) / max(rhs[a], 1e-300) for a in lhs)
    return {"residual": residual, "pushforward": lhs, "predicted": rhs, "skipped": skipped}


def conformality_residual(gens, psi: LinearForm, depth: int, gamma, s: float,
                          threads: int = 1) -> float:
    """Maximal relative cylinder discrepancy of the depth-``depth`` atomic measure.

    ``gamma`` is a word (letters or a string such as ``"aB"``) or a generator
    given as a GroupElement.
    """
    from .words import enumerate_ball, parse_word

    if depth < 3:
        raise InvalidInputError("depth must be at least 3")
    if isinstance(gamma, GroupElement):
        match = [a for a in gens.letters() if gens.element(a).allclose(gamma)]
        if not match:
            raise InvalidInputError("gamma is not a generator or inverse generator")
        gamma = match[:1]
    elif isinstance(gamma, str):
        gamma = parse_word(gamma)
    table = enumerate_ball(gens, depth, with_flags=True, threads=threads)
    return conformality_report(table, gens, psi, gamma, s)["residual"]


def opposite_form(psi: LinearForm, desc: GroupDescriptor) -> LinearForm:
    return LinearForm(opposition_involution(psi.coeffs, desc))
