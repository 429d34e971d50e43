"""Generator systems, reduced-word balls, Schottky checks and orbit caches.

Words are sequences of signed generator indices: ``+i`` is the i-th generator
(1-based) and ``-i`` its inverse.  Internally letters are also given codes
``0, 1, 2, ...`` ordered ``+1, -1, +2, -2, ...``; tables are sorted by these
codes with shorter words first among common prefixes.
"""
from __future__ import annotations

import hashlib
import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .boundary import (GENERAL_POSITION_MARGIN, Flag, canonicalize_frames, flag_distance,
                       flag_distance_batch)
from .errors import (CacheFormatError, ConfigurationError, InvalidInputError,
                     MatrixOverflowError, NonFreeError, PreconditionError,
                     ResourceError, StaleCacheError)
from .matgroup import (GroupDescriptor, GroupElement, _qr_positive, cartan_batch,
                       is_loxodromic, jordan_batch)

OVERFLOW_BOUND = 1e300
CACHE_ENV = "ANOSOV_CACHE_DIR"
MAGIC = b"ANOSOV1\0"
CACHE_VERSION = 1


def letter_code(letter: int) -> int:
    return 2 * (abs(letter) - 1) + (1 if letter < 0 else 0)


def code_letter(code: int) -> int:
    return (code // 2 + 1) * (-1 if code % 2 else 1)


def word_string(word: Sequence[int]) -> str:
    """Human-readable word: generators a, b, c, ... and inverses A, B, C, ..."""
    if len(word) == 0:
        return "e"
    out = []
    for a in word:
        ch = chr(ord("a") + abs(a) - 1)
        out.append(ch if a > 0 else ch.upper())
    return "".join(out)


def parse_word(text: str) -> list[int]:
    if text in ("", "e"):
        return []
    out = []
    for ch in text:
        if not ch.isalpha():
            raise InvalidInputError(f"bad letter {ch!r} in word {text!r}")
        idx = ord(ch.lower()) - ord("a") + 1
        out.append(idx if ch.islower() else -idx)
    return out


def is_reduced(word: Sequence[int]) -> bool:
    return all(a != -b for a, b in zip(word, word[1:]))


def reduce_word(word: Sequence[int]) -> list[int]:
    out: list[int] = []
    for a in word:
        if out and out[-1] == -a:
            out.pop()
        else:
            out.append(a)
    return out


class GeneratorSystem:
    """A finite list of p >= 2 generators of a subgroup, with their inverses.

    Parameters
    ----------
    generators : sequence of GroupElement
    labels : sequence of str, optional
    loxodromic_margin : float
        Generators failing ``is_loxodromic`` with this margin trigger a warning.
    """

    def __init__(self, generators: Sequence[GroupElement], labels: Sequence[str] | None = None,
                 loxodromic_margin: float = 0.0):
        gens = list(generators)
        if len(gens) < 2:
            raise InvalidInputError("a generator system needs p >= 2 generators")
        desc = gens[0].descriptor
        if any(g.descriptor.factor_dims != desc.factor_dims for g in gens):
            raise InvalidInputError("generators live in different groups")
        self.descriptor = desc
        self.generators = tuple(gens)
        self.inverses = tuple(g.inverse() for g in gens)
        self.labels = tuple(labels) if labels is not None else tuple(
            chr(ord("a") + i) for i in range(len(gens)))
        self.loxodromic_margin = loxodromic_margin
        for i, g in enumerate(gens):
            if not is_loxodromic(g, loxodromic_margin):
                warnings.warn(f"generator {self.labels[i]} is not loxodromic with margin "
                              f"{loxodromic_margin}", stacklevel=2)
        # letter stacks indexed by code
        self._mats = []
        self._invs = []
        for f in range(len(desc.factor_dims)):
            mats, invs = [], []
            for g, gi in zip(self.generators, self.inverses):
                mats += [g.factors[f], gi.factors[f]]
                invs += [g.inverse_factors[f], gi.inverse_factors[f]]
            self._mats.append(np.array(mats))
            self._invs.append(np.array(invs))

    @property
    def p(self) -> int:
        return len(self.generators)

    def letters(self) -> list[int]:
        return [code_letter(c) for c in range(2 * self.p)]

    def element(self, letter: int) -> GroupElement:
        if letter == 0 or abs(letter) > self.p:
            raise InvalidInputError(f"letter {letter} out of range for p={self.p}")
        return self.generators[letter - 1] if letter > 0 else self.inverses[-letter - 1]

    def word_element(self, word: Sequence[int]) -> GroupElement:
        g = self.descriptor.identity()
        for a in word:
            g = g @ self.element(int(a))
        return g

    def digest(self, depth: int) -> bytes:
        h = hashlib.sha256()
        h.update(struct.pack("<II", self.p, depth))
        h.update(struct.pack("<I", len(self.descriptor.factor_dims)))
        h.update(struct.pack(f"<{len(self.descriptor.factor_dims)}I", *self.descriptor.factor_dims))
        for g in self.generators:
            for m in g.factors:
                h.update(np.ascontiguousarray(m, dtype="<f8").tobytes())
        return h.digest()

    def letter_stack(self, factor: int):
        return self._mats[factor], self._invs[factor]


# ---------------------------------------------------------------------------
# enumeration


@dataclass
class OrbitTable:
    """Rows of a word ball: reduced words with their Cartan and Jordan projections.

    ``words`` is an int16 array padded with zeros; ``lengths`` holds the word
    lengths.  ``flags`` (optional) holds flattened attracting frames from the
    singular value decomposition, one row per word.
    """

    descriptor: GroupDescriptor
    depth: int
    words: np.ndarray
    lengths: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    flags: np.ndarray | None
    digest: bytes
    p: int
    gens: GeneratorSystem | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.lengths)

    def word(self, i: int) -> list[int]:
        return [int(a) for a in self.words[i, :self.lengths[i]]]

    def mu_norms(self) -> np.ndarray:
        return np.sqrt(np.einsum("ij,ij->i", self.mu, self.mu))

    def subset(self, rows) -> "OrbitTable":
        rows = np.asarray(rows)
        return OrbitTable(self.descriptor, self.depth, self.words[rows], self.lengths[rows],
                          self.mu[rows], self.lam[rows],
                          None if self.flags is None else self.flags[rows],
                          self.digest, self.p, self.gens)

    def truncate(self, depth: int) -> "OrbitTable":
        """Rows with word length at most ``depth`` (same ordering)."""
        sub = self.subset(np.flatnonzero(self.lengths <= depth))
        sub.words = np.ascontiguousarray(sub.words[:, :depth])
        sub.depth = depth
        if self.gens is not None:
            sub.digest = self.gens.digest(depth)
        return sub

    def find(self, word: Sequence[int]) -> int:
        word = list(word)
        k = len(word)
        mask = self.lengths == k
        if k:
            mask &= np.all(self.words[:, :k] == np.asarray(word, dtype=np.int16), axis=1)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise KeyError(word_string(word))
        return int(idx[0])


def ball_size(p: int, depth: int) -> int:
    if depth == 0:
        return 1
    q = 2 * p - 1
    return 1 + 2 * p * (q ** depth - 1) // (q - 1)


@dataclass(frozen=True)
class EnumerationOptions:
    threads: int = 1
    with_flags: bool = False
    check_free: bool = True
    max_rows: int | None = None
    memory_budget_bytes: int = 4 * 2 ** 30


def _row_bytes(desc: GroupDescriptor, depth: int, with_flags: bool) -> int:
    sq = sum(d * d for d in desc.factor_dims)
    # stored projections, words, plus matrices alive during one level
    return 16 * desc.dim + 2 * depth + 16 * sq + (8 * sq if with_flags else 0)


def _attracting_frames(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = []
    for m in mats:
        u = np.linalg.svd(m)[0]
        out.append(canonicalize_frames(u).reshape(len(m), -1))
    return np.concatenate(out, axis=1)


FREE_CHECK_SCALE = np.exp(12.0)


def _quantized_keys(mats: Sequence[np.ndarray], projective: Sequence[bool]):
    """Rounded entries of elements small enough for the rounding to be meaningful.

    Returns the keys and the boolean mask of rows they belong to.  Rows whose
    largest entry exceeds ``FREE_CHECK_SCALE`` are skipped: there, distinct
    elements can agree to double precision.
    """
    n = len(mats[0])
    small = np.ones(n, dtype=bool)
    for m in mats:
        small &= np.abs(m).max(axis=(1, 2)) <= FREE_CHECK_SCALE
    cols = []
    for m, proj in zip(mats, projective):
        x = m[small].reshape(int(small.sum()), m.shape[1] * m.shape[2])
        if proj:
            idx = np.argmax(np.abs(x), axis=1)
            x = x * np.where(x[np.arange(len(x)), idx] < 0, -1.0, 1.0)[:, None]
        cols.append(np.round(x * 1e8))
    return np.concatenate(cols, axis=1).astype(np.int64), small


def _shard(gens: GeneratorSystem, first_code: int, depth: int, with_flags: bool):
    """All reduced words of length 1..depth starting with ``first_code``."""
    desc = gens.descriptor
    nf = len(desc.factor_dims)
    stacks = [gens.letter_stack(f) for f in range(nf)]
    codes = np.full((1, 1), first_code, dtype=np.int16)
    mats = [stacks[f][0][[first_code]] for f in range(nf)]
    invs = [stacks[f][1][[first_code]] for f in range(nf)]
    out_codes, out_mu, out_lam, out_flags, out_keys = [], [], [], [], []
    for level in range(1, depth + 1):
        if level > 1:
            last = codes[:, -1]
            new_codes, new_mats, new_invs = [], [[] for _ in range(nf)], [[] for _ in range(nf)]
            for c in range(2 * gens.p):
                keep = np.flatnonzero(last != (c ^ 1))
                if keep.size == 0:
                    continue
                new_codes.append(np.column_stack(
                    [codes[keep], np.full(keep.size, c, dtype=np.int16)]))
                # overflow is detected below and reported with the word
                with np.errstate(over="ignore", invalid="ignore"):
                    for f in range(nf):
                        new_mats[f].append(mats[f][keep] @ stacks[f][0][c])
                        new_invs[f].append(stacks[f][1][c] @ invs[f][keep])
            codes = np.concatenate(new_codes)
            mats = [np.concatenate(x) for x in new_mats]
            invs = [np.concatenate(x) for x in new_invs]
        big = np.zeros(len(codes), dtype=bool)
        for m, mi in zip(mats, invs):
            big |= ~(np.abs(m).max(axis=(1, 2)) <= OVERFLOW_BOUND)
            big |= ~(np.abs(mi).max(axis=(1, 2)) <= OVERFLOW_BOUND)
        if big.any():
            bad = [code_letter(int(c)) for c in codes[np.argmax(big)]]
            raise MatrixOverflowError(
                f"matrix entries exceed {OVERFLOW_BOUND:g} at word {word_string(bad)}")
        out_codes.append(codes)
        out_mu.append(cartan_batch(desc, mats, invs))
        out_lam.append(jordan_batch(desc, mats, invs))
        if with_flags:
            out_flags.append(_attracting_frames(mats))
        out_keys.append(_quantized_keys(mats, desc.projective))
    return out_codes, out_mu, out_lam, out_flags, out_keys


def enumerate_ball(gens: GeneratorSystem, depth: int,
                   options: EnumerationOptions | None = None, **kwargs) -> OrbitTable:
    """Enumerate all reduced words of length <= ``depth`` with mu and lambda.

    Work is split by first letter; each shard is computed level by level with
    batched matrix products and the shards are merged and sorted, so the
    result does not depend on ``options.threads``.

    Raises
    ------
    ResourceError
        If the ball is larger than ``max_rows`` or the memory budget.
    MatrixOverflowError
        If an entry of a product (or of its inverse) exceeds 1e300.
    NonFreeError
        If two distinct reduced words give the same element.
    """
    if options is None:
        options = EnumerationOptions(**kwargs)
    elif kwargs:
        raise TypeError("pass either options or keyword arguments")
    if depth < 0:
        raise InvalidInputError("depth must be non-negative")
    desc = gens.descriptor
    rows = ball_size(gens.p, depth)
    if options.max_rows is not None and rows > options.max_rows:
        raise ResourceError(f"ball of depth {depth} has {rows} rows, above max_rows="
                            f"{options.max_rows}")
    need = rows * _row_bytes(desc, depth, options.with_flags)
    if need > options.memory_budget_bytes:
        raise ResourceError(f"ball of depth {depth} needs about {need} bytes, above the "
                            f"memory budget of {options.memory_budget_bytes} bytes")

    codes_parts = [np.zeros((1, 0), dtype=np.int16)]
    mu_parts = [np.zeros((1, desc.dim))]
    lam_parts = [np.zeros((1, desc.dim))]
    sq = sum(d * d for d in desc.factor_dims)
    flag_parts = [np.concatenate([np.eye(d).ravel() for d in desc.factor_dims])[None]]
    ident = [np.eye(d)[None] for d in desc.factor_dims]
    key_parts = [_quantized_keys(ident, desc.projective)[0]]
    mask_parts = [np.ones(1, dtype=bool)]
    if depth > 0:
        jobs = range(2 * gens.p)
        if options.threads > 1:
            with ThreadPoolExecutor(max_workers=options.threads) as pool:
                shards = list(pool.map(
                    lambda c: _shard(gens, c, depth, options.with_flags), jobs))
        else:
            shards = [_shard(gens, c, depth, options.with_flags) for c in jobs]
        for sc, smu, slam, sflag, skey in shards:
            codes_parts += sc
            mu_parts += smu
            lam_parts += slam
            flag_parts += sflag
            key_parts += [k for k, _ in skey]
            mask_parts += [m for _, m in skey]

    n = sum(len(c) for c in codes_parts)
    padded = np.full((n, depth), -1, dtype=np.int16)
    lengths = np.zeros(n, dtype=np.uint16)
    start = 0
    for c in codes_parts:
        padded[start:start + len(c), :c.shape[1]] = c
        lengths[start:start + len(c)] = c.shape[1]
        start += len(c)
    order = np.lexsort((padded + 1).T[::-1]) if depth else np.arange(n)
    padded = padded[order]
    lengths = lengths[order]
    mu = np.concatenate(mu_parts)[order]
    lam = np.concatenate(lam_parts)[order]
    flags = np.concatenate(flag_parts)[order] if options.with_flags else None
    if flags is not None:
        assert flags.shape[1] == sq

    if options.check_free and n > 1:
        checked = np.concatenate(mask_parts)
        rank = np.empty(n, dtype=np.int64)
        rank[order] = np.arange(n)
        keys = np.concatenate(key_parts)
        where = rank[np.flatnonzero(checked)]
        _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
        if np.any(counts > 1):
            dup_key = keys[first[np.argmax(counts)]]
            same = np.sort(where[np.all(keys == dup_key, axis=1)])[:2]
            w = [word_string([code_letter(int(c)) for c in padded[i, :lengths[i]]]) for i in same]
            raise NonFreeError(f"words {w[0]} and {w[1]} give the same element; the "
                               "generators do not look free")

    if depth >= 2:
        lam = _lam_from_cores(padded, lengths, lam)

    words = np.zeros((n, depth), dtype=np.int16)
    valid = padded >= 0
    words[valid] = ((padded[valid] // 2 + 1) * np.where(padded[valid] % 2, -1, 1)).astype(np.int16)
    return OrbitTable(desc, depth, words, lengths, mu, lam, flags, gens.digest(depth), gens.p, gens)


def _row_keys(padded: np.ndarray, base: int) -> np.ndarray:
    if padded.shape[1] * np.log2(base) < 62:
        weights = base ** np.arange(padded.shape[1], dtype=np.int64)
        return (padded.astype(np.int64) + 1) @ weights
    rows = np.ascontiguousarray(padded)
    return rows.view(np.dtype((np.void, rows.dtype.itemsize * rows.shape[1])))[:, 0]


def _lam_from_cores(padded: np.ndarray, lengths: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Replace lambda of u c u^-1 by lambda of its cyclically reduced core c.

    The Jordan projection is conjugation invariant, and reading it off the
    long conjugated product loses all precision to cancellation in the trace.
    """
    n, depth = padded.shape
    length = lengths.astype(np.int64)
    strip = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    rows = np.arange(n)
    for j in range(depth // 2):
        tail = np.clip(length - 1 - j, 0, depth - 1)
        a = padded[:, j]
        b = padded[rows, tail]
        # codes of inverse letters differ in the lowest bit
        can = alive & (length - 2 * j >= 2) & (a >= 0) & (b == (a ^ 1))
        strip += can
        alive = can
    todo = np.flatnonzero(strip > 0)
    if todo.size == 0:
        return lam
    idx = strip[todo, None] + np.arange(depth)
    core = np.take_along_axis(padded[todo], np.clip(idx, 0, depth - 1), axis=1)
    core[np.arange(depth)[None, :] >= (length[todo] - 2 * strip[todo])[:, None]] = -1
    base = int(padded.max()) + 2
    keys = _row_keys(padded, base)
    order = np.argsort(keys, kind="stable")
    pos = np.searchsorted(keys[order], _row_keys(core, base))
    lam = lam.copy()
    lam[todo] = lam[order[pos]]
    return lam


def table_matrices(table: OrbitTable, gens: GeneratorSystem | None = None):
    """Recompute the matrices and inverses of every row, one stack per factor."""
    gens = gens or table.gens
    if gens is None:
        raise InvalidInputError("generators are required to rebuild matrices")
    desc = table.descriptor
    n = len(table)
    mats, invs = [], []
    codes = np.where(table.words > 0, 2 * (table.words - 1), 2 * (-table.words - 1) + 1)
    for f, d in enumerate(desc.factor_dims):
        g, gi = gens.letter_stack(f)
        m = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        mi = m.copy()
        for j in range(table.depth):
            rows = np.flatnonzero(table.lengths > j)
            c = codes[rows, j]
            m[rows] = m[rows] @ g[c]
            mi[rows] = gi[c] @ mi[rows]
        mats.append(m)
        invs.append(mi)
    return mats, invs


# ---------------------------------------------------------------------------
# coset deduplication

COSET_KINDS = ("orthogonal-form", "factor-ratio")


def coset_invariants(table: OrbitTable, kind: str, J=None, twist=None,
                     gens: GeneratorSystem | None = None) -> np.ndarray:
    """Per-row invariant of the coset H*gamma, flattened.

    ``orthogonal-form`` uses gamma^T J gamma per factor (H = O(J)).
    ``factor-ratio`` needs two factors and uses w g2^-1 w^-1 g1 with
    ``twist = w`` (the identity when omitted), which is constant on cosets of
    H = {(g, w^-1 g w)}.
    """
    if kind not in COSET_KINDS:
        raise ConfigurationError(f"unknown invariant kind {kind!r}; expected one of {COSET_KINDS}")
    mats, invs = table_matrices(table, gens)
    desc = table.descriptor
    if kind == "orthogonal-form":
        if J is None:
            J = [np.eye(d) for d in desc.factor_dims]
        elif isinstance(J, np.ndarray) and J.ndim == 2:
            J = [J]
        return np.concatenate([(np.swapaxes(m, 1, 2) @ j @ m).reshape(len(m), -1)
                               for m, j in zip(mats, J)], axis=1)
    if len(mats) != 2 or desc.factor_dims[0] != desc.factor_dims[1]:
        raise ConfigurationError("factor-ratio needs two factors of equal dimension")
    w = np.eye(desc.factor_dims[0]) if twist is None else np.asarray(twist, dtype=float)
    x = w @ invs[1] @ np.linalg.inv(w) @ mats[0]
    if desc.projective[0]:
        flat = x.reshape(len(x), -1)
        idx = np.argmax(np.abs(flat), axis=1)
        flat = flat * np.where(flat[np.arange(len(flat)), idx] < 0, -1.0, 1.0)[:, None]
        return flat
    return x.reshape(len(x), -1)


def dedup_cosets(table: OrbitTable, invariant_kind: str, J=None, twist=None,
                 gens: GeneratorSystem | None = None, quantum: float = 1e-8) -> OrbitTable:
    """Keep one row (the lexicographically least word) per coset invariant value.

    Invariants are rounded on an absolute grid of size ``quantum`` and only
    compared between rows whose invariant entries stay below
    ``FREE_CHECK_SCALE``.  Larger invariants are close to rank one, and
    distinct cosets can agree to double precision there, so those rows are
    always kept.
    """
    inv = coset_invariants(table, invariant_kind, J, twist, gens)
    small = np.abs(inv).max(axis=1) <= FREE_CHECK_SCALE
    keep = np.ones(len(table), dtype=bool)
    rows = np.flatnonzero(small)
    if rows.size:
        keys = np.round(inv[rows] / quantum).astype(np.int64)
        _, first = np.unique(keys, axis=0, return_index=True)
        keep[rows] = False
        keep[rows[first]] = True
    return table.subset(np.flatnonzero(keep))


# ---------------------------------------------------------------------------
# persistence


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "anosov"


def _row_dtype(k: int, dim: int, nflag: int) -> np.dtype:
    fields = [("len", "<u2"), ("w", "<i2", (k,)), ("mu", "<f8", (dim,)), ("lam", "<f8", (dim,))]
    if nflag:
        fields.append(("flag", "<f8", (nflag,)))
    return np.dtype(fields)


def save_table(table: OrbitTable, path) -> None:
    """Write ``table`` in the binary orbit cache format (little-endian)."""
    desc = table.descriptor
    dims = desc.factor_dims
    nflag = 0 if table.flags is None else table.flags.shape[1]
    header = MAGIC + struct.pack("<IIII", CACHE_VERSION, table.p, table.depth, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    header += table.digest + struct.pack("<Q", len(table)) + struct.pack("<I", 1 if nflag else 0)

    lengths = table.lengths.astype(np.int64)
    sizes = 2 + 2 * lengths + 16 * desc.dim + 8 * nflag
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    buf = np.zeros(int(sizes.sum()), dtype=np.uint8)
    for k in np.unique(lengths):
        rows = np.flatnonzero(lengths == k)
        dt = _row_dtype(int(k), desc.dim, nflag)
        for chunk in np.array_split(rows, max(1, len(rows) // 200_000)):
            rec = np.zeros(len(chunk), dtype=dt)
            rec["len"] = k
            rec["w"] = table.words[chunk, :k]
            rec["mu"] = table.mu[chunk]
            rec["lam"] = table.lam[chunk]
            if nflag:
                rec["flag"] = table.flags[chunk]
            raw = rec.view(np.uint8).reshape(len(chunk), dt.itemsize)
            buf[offsets[chunk, None] + np.arange(dt.itemsize)] = raw
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(buf.tobytes())
    os.replace(tmp, path)


def load_table(path, gens: GeneratorSystem | None = None) -> OrbitTable:
    """Read a cache file; with ``gens`` the digest must match or StaleCacheError is raised."""
    data = Path(path).read_bytes()
    try:
        if data[:8] != MAGIC:
            raise CacheFormatError("bad magic bytes")
        version, p, depth, nf = struct.unpack_from("<IIII", data, 8)
        if version != CACHE_VERSION:
            raise CacheFormatError(f"unsupported cache version {version}")
        pos = 24
        dims = struct.unpack_from(f"<{nf}I", data, pos)
        pos += 4 * nf
        digest = data[pos:pos + 32]
        pos += 32
        (n,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        (has_flags,) = struct.unpack_from("<I", data, pos)
        pos += 4
        desc = GroupDescriptor(tuple(dims))
    except struct.error as exc:
        raise CacheFormatError(f"truncated header: {exc}") from None
    except InvalidInputError as exc:
        raise CacheFormatError(f"bad header: {exc}") from None
    if gens is not None:
        if gens.descriptor.factor_dims != desc.factor_dims or gens.p != p \
                or gens.digest(depth) != digest:
            raise StaleCacheError(f"cache {path} was written for different generators")
    nflag = sum(d * d for d in dims) if has_flags else 0
    base = 2 + 16 * desc.dim + 8 * nflag

    lengths = np.zeros(n, dtype=np.uint16)
    offsets = np.zeros(n, dtype=np.int64)
    unpack = struct.Struct("<H").unpack_from
    off = pos
    total = len(data)
    try:
        for i in range(n):
            (k,) = unpack(data, off)
            lengths[i] = k
            offsets[i] = off
            off += base + 2 * k
    except struct.error:
        raise CacheFormatError("truncated payload") from None
    if off != total:
        raise CacheFormatError(f"payload size mismatch ({total - off} trailing bytes)")
    if n and lengths.max() > depth:
        raise CacheFormatError("word longer than the recorded depth")

    raw = np.frombuffer(data, dtype=np.uint8)
    words = np.zeros((n, depth), dtype=np.int16)
    mu = np.zeros((n, desc.dim))
    lam = np.zeros((n, desc.dim))
    flags = np.zeros((n, nflag)) if nflag else None
    for k in np.unique(lengths):
        rows = np.flatnonzero(lengths == k)
        dt = _row_dtype(int(k), desc.dim, nflag)
        for chunk in np.array_split(rows, max(1, len(rows) // 200_000)):
            rec = raw[offsets[chunk, None] + np.arange(dt.itemsize)].copy().view(dt).ravel()
            words[chunk, :k] = rec["w"].reshape(len(chunk), k)
            mu[chunk] = rec["mu"]
            lam[chunk] = rec["lam"]
            if nflag:
                flags[chunk] = rec["flag"]
    return OrbitTable(desc, depth, words, lengths, mu, lam, flags, digest, p, gens)


def cached_ball(gens: GeneratorSystem, depth: int, cache_dir=None,
                options: EnumerationOptions | None = None) -> OrbitTable:
    """Enumerate through an on-disk cache keyed by the generator digest."""
    options = options or EnumerationOptions()
    cache_dir = Path(cache_dir) if cache_dir else default_cache_dir()
    tag = gens.digest(depth).hex()[:16] + ("-f" if options.with_flags else "")
    path = cache_dir / f"ball-{tag}.bin"
    if path.exists():
        try:
            return load_table(path, gens)
        except (CacheFormatError, StaleCacheError):
            pass
    table = enumerate_ball(gens, depth, options)
    try:
        save_table(table, path)
    except OSError as exc:
        warnings.warn(f"could not write cache {path}: {exc}", stacklevel=2)
    return table


# ---------------------------------------------------------------------------
# Schottky check


def attracting_flag(g: GroupElement) -> Flag:
    """Attracting fixed flag: the span of eigenvectors ordered by decreasing modulus."""
    frames = []
    for m in g.factors:
        vals, vecs = np.linalg.eig(m)
        order = np.argsort(-np.abs(vals), kind="stable")
        vecs = np.real_if_close(vecs[:, order], tol=1e6)
        if np.iscomplexobj(vecs):
            raise PreconditionError("generator has complex eigenvalues; not loxodromic")
        frames.append(_qr_positive(vecs)[0])
    return Flag(frames, g.descriptor)


def _act_batch(g: GroupElement, frames: np.ndarray) -> np.ndarray:
    out, start = [], 0
    for m in g.factors:
        d = m.shape[0]
        k = frames[:, start:start + d * d].reshape(-1, d, d)
        start += d * d
        q = _qr_positive(m @ k)[0]
        out.append(canonicalize_frames(q).reshape(len(k), -1))
    return np.concatenate(out, axis=1)


def _sample_ball(center: Flag, radius: float, count: int, rng: np.random.Generator,
                 include_boundary: bool = True) -> np.ndarray:
    """Flags within ``radius`` of ``center`` by rotating its frames with random skew matrices.

    Samples are pushed out to the sphere of the ball when ``include_boundary``
    (needed to test closures), by bisection on the rotation angle.
    """
    desc = center.descriptor
    out = []
    for k, d in zip(center.frames, desc.factor_dims):
        x = rng.normal(size=(count, d, d))
        x = x - np.swapaxes(x, 1, 2)
        x /= np.linalg.norm(x, axis=(1, 2), keepdims=True)
        out.append((k, x))

    def frames_at(t):
        parts = []
        for (k, x) in out:
            rot = expm(t[:, None, None] * x)
            parts.append(canonicalize_frames(rot @ k).reshape(count, -1))
        return np.concatenate(parts, axis=1)

    c = center.flat()[None]
    if include_boundary:
        lo, hi = np.zeros(count), np.full(count, 4.0 * radius + 1e-3)
        hi = np.minimum(hi, np.pi / 2)
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            inside = flag_distance_batch(desc, frames_at(mid), c) <= radius
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        frac = rng.uniform(size=count) ** (1.0 / max(1, desc.rank))
        frac[: max(1, count // 4)] = 1.0
        pts = frames_at(lo * frac)
    else:
        pts = frames_at(rng.uniform(0, radius, size=count))
    dist = flag_distance_batch(desc, pts, c)
    return pts[dist <= radius + 1e-12]


def _haar_frames(desc: GroupDescriptor, count: int, rng: np.random.Generator) -> np.ndarray:
    parts = []
    for d in desc.factor_dims:
        q = _qr_positive(rng.normal(size=(count, d, d)))[0]
        parts.append(canonicalize_frames(q).reshape(count, -1))
    return np.concatenate(parts, axis=1)


def _minors_batch(desc: GroupDescriptor, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.full(len(a), np.inf)
    start = 0
    for d in desc.factor_dims:
        fa = a[:, start:start + d * d].reshape(-1, d, d)
        fb = b[:, start:start + d * d].reshape(-1, d, d)
        start += d * d
        for i in range(1, d):
            m = np.concatenate([fa[:, :, :i], fb[:, :, :d - i]], axis=2)
            out = np.minimum(out, np.abs(np.linalg.det(m)))
    return out


@dataclass
class SchottkyReport:
    verdict: str
    conditions: dict
    epsilon_hat: float
    radii: tuple[float, float] | None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _check_radii(gens, centers, r_small, r_big, count, rng, margin, balls=None):
    desc = gens.descriptor
    keys = list(centers)
    balls = {} if balls is None else balls

    def ball(key, radius):
        if (key, radius) not in balls:
            balls[(key, radius)] = _sample_ball(centers[key], radius, count, rng)
        return balls[(key, radius)]

    small = {key: ball(key, r_small) for key in keys}
    large = {key: ball(key, r_big) for key in keys}
    flat = {key: centers[key].flat()[None] for key in keys}
    cond = {}
    # (1) b_i^w inside B_j^v for i != j
    ok = r_small < r_big
    for (i, w) in keys:
        for (j, v) in keys:
            if i != j:
                ok &= bool(np.all(flag_distance_batch(desc, small[(i, w)], flat[(j, v)]) < r_big))
    cond["1"] = bool(ok)
    # (2) closures of distinct small balls are transverse
    worst = np.inf
    for a in keys:
        for b in keys:
            if a != b:
                worst = min(worst, float(_minors_batch(desc, small[a], small[b][::-1]).min()))
    cond["2"] = bool(worst > margin)
    # (3) gamma_i^w B_i^w inside b_i^w, and gamma_i^w Lipschitz on B_i^w
    eps = 0.0
    ok = r_small < r_big
    for (i, w) in keys:
        g = gens.element(i * w)
        pts = large[(i, w)]
        img = _act_batch(g, pts)
        ok &= bool(np.all(flag_distance_batch(desc, img, flat[(i, w)]) < r_small))
        half = len(pts) // 2
        x, y = pts[:half], pts[half:2 * half]
        dxy = flag_distance_batch(desc, x, y)
        good = dxy > 1e-9
        if good.any():
            ratio = flag_distance_batch(desc, img[:half], img[half:2 * half])[good] / dxy[good]
            eps = max(eps, float(ratio.max()))
        # local stretch: pair every sample with a tiny rotation of itself
        q = pts[: min(len(pts), 64)]
        q2 = _perturb(q, desc, 1e-5, rng)
        dq = flag_distance_batch(desc, q, q2)
        fine = dq > 1e-12
        if fine.any():
            gq = flag_distance_batch(desc, _act_batch(g, q), _act_batch(g, q2))
            eps = max(eps, float((gq[fine] / dq[fine]).max()))
    cond["3"] = bool(ok) and eps < 1.0
    # (4) common intersection of the large balls
    cand = np.concatenate([_haar_frames(desc, 4 * count, rng)] + [large[k] for k in keys])
    inside = np.ones(len(cand), dtype=bool)
    for key in keys:
        inside &= flag_distance_batch(desc, cand, flat[key]) < r_big
    cond["4"] = bool(inside.any())
    return cond, eps


def _perturb(flat: np.ndarray, desc: GroupDescriptor, t: float,
             rng: np.random.Generator) -> np.ndarray:
    parts, start = [], 0
    for d in desc.factor_dims:
        k = flat[:, start:start + d * d].reshape(-1, d, d)
        start += d * d
        x = rng.normal(size=k.shape)
        x = x - np.swapaxes(x, 1, 2)
        x /= np.linalg.norm(x, axis=(1, 2), keepdims=True)
        parts.append(canonicalize_frames(expm(t * x) @ k).reshape(len(k), -1))
    return np.concatenate(parts, axis=1)


SMALL_RADII = (0.02, 0.05, 0.1, 0.2, 0.3)
LARGE_RADII = tuple(np.round(np.linspace(0.4, 1.55, 24), 4))


def _search(gens, centers, count, seed, margin):
    best = None
    balls: dict = {}
    rng = np.random.default_rng(seed)
    for r_small in SMALL_RADII:
        for r_big in LARGE_RADII:
            if r_big <= r_small:
                continue
            cond, eps = _check_radii(gens, centers, r_small, r_big, count, rng, margin, balls)
            score = sum(cond.values())
            if best is None or score > best[0]:
                best = (score, cond, eps, (r_small, r_big))
            if score == 4:
                return best
    return best


def schottky_check(gens: GeneratorSystem, sample_count: int = 64, seed: int = 0,
                   margin: float = GENERAL_POSITION_MARGIN) -> SchottkyReport:
    """Search ball neighborhoods of the attracting flags and test the Schottky conditions.

    The search runs over a grid of radii (small balls b, large balls B, both
    centred at the attracting flags).  Conditions are verified on random
    samples; the search is repeated with twice the samples and any verdict
    that changes is reported as ``inconclusive``.
    """
    if gens.p < 2:
        raise InvalidInputError("p >= 2 generators are required")
    centers = {}
    for i in range(1, gens.p + 1):
        for w in (1, -1):
            g = gens.element(i * w)
            if not is_loxodromic(g, 0.0):
                raise PreconditionError(f"generator {word_string([i * w])} is not loxodromic")
            centers[(i, w)] = attracting_flag(g)
    for i in range(1, gens.p + 1):
        if flag_distance(centers[(i, 1)], centers[(i, -1)]) < 1e-9:
            raise PreconditionError("attracting and repelling flags coincide")
    first = _search(gens, centers, sample_count, seed, margin)
    second = _search(gens, centers, 2 * sample_count, seed + 1, margin)
    passed_1 = first[0] == 4
    passed_2 = second[0] == 4
    if passed_1 and passed_2:
        verdict = "pass"
    elif not passed_1 and not passed_2:
        verdict = "fail"
    else:
        verdict = "inconclusive"
    score, cond, eps, radii = second
    return SchottkyReport(verdict, cond, eps, radii,
                          {"first_pass": first[1], "radii_first": first[3],
                           "epsilon_first": first[2]})

