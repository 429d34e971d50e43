"""Counting series N(T) and least-squares fits of log N = delta*T + beta*log T + c."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FitError

GRID_STEP = 0.1
MIN_COUNT = 30
MIN_POINTS = 10


@dataclass
class CountRecord:
    """N(T) on a uniform grid of T values."""

    T: np.ndarray
    N: np.ndarray
    meta: dict = field(default_factory=dict)

    def rows(self):
        with np.errstate(divide="ignore"):
            logn = np.log(self.N.astype(float))
        return zip(self.T.tolist(), self.N.tolist(), logn.tolist())

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("T,N,logN\n")
            for t, n, ln in self.rows():
                fh.write(f"{float_repr(t)},{n},{float_repr(ln)}\n")


def float_repr(x: float) -> str:
    """Shortest round-trip decimal form of a binary64 number."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "-inf" if x < 0 else "inf"
    return repr(x)


def t_grid(t_max: float, step: float = GRID_STEP) -> np.ndarray:
    n = int(np.floor(t_max / step + 1e-9))
    return np.round(np.arange(n + 1) * step, 10)


def count_series(sizes: np.ndarray, grid: np.ndarray, meta: dict | None = None) -> CountRecord:
    """N(T) = #{sizes <= T} for every T in ``grid`` (one sorted pass)."""
    s = np.sort(np.asarray(sizes, dtype=float))
    n = np.searchsorted(s, grid, side="right").astype(np.int64)
    return CountRecord(np.asarray(grid, dtype=float), n, dict(meta or {}))


def reliable_t_max(depth: int, min_generator_norm: float) -> float:
    """Upper end of the range where a word ball of this depth does not undercount."""
    return 0.8 * depth * min_generator_norm


def default_window(t_max: float) -> tuple[float, float]:
    return 0.4 * t_max, t_max


@dataclass
class FitResult:
    delta: float
    beta: float
    c: float
    window: tuple[float, float]
    rms: float
    se_delta: float
    se_beta: float
    se_c: float
    n_points: int
    beta_frozen: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d

    def to_json(self) -> str:
        return dumps(self.to_dict())


def dumps(obj) -> str:
    """JSON with floats written as shortest round-trip decimals (non-finite as strings)."""

    def clean(x):
        if isinstance(x, dict):
            return {str(k): clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, (np.integer,)):
            return int(x)
        if isinstance(x, (bool, np.bool_)):
            return bool(x)
        if isinstance(x, (float, np.floating)):
            x = float(x)
            return x if np.isfinite(x) else float_repr(x)
        if isinstance(x, np.ndarray):
            return clean(x.tolist())
        return x

    return json.dumps(clean(obj), indent=2, sort_keys=True)


def fit_exponential_polynomial(record: CountRecord, window: tuple[float, float] | None = None,
                               beta: float | None = None, fit_beta: bool = True,
                               min_count: int = MIN_COUNT,
                               min_points: int = MIN_POINTS) -> FitResult:
    """Ordinary least squares for log N(T) = delta*T + beta*log T + c.

    Parameters
    ----------
    window : (lo, hi), optional
        Defaults to the full grid.
    beta : float, optional
        Freeze the polynomial exponent at this value.
    fit_beta : bool
        With ``beta`` None, fit beta freely when True and set it to 0 otherwise.

    Only grid points inside the window with N >= ``min_count`` are used.
    """
    T = np.asarray(record.T, dtype=float)
    N = np.asarray(record.N, dtype=float)
    lo, hi = window if window is not None else (float(T.min()), float(T.max()))
    use = (T >= lo - 1e-12) & (T <= hi + 1e-12) & (N >= min_count) & (T > 0)
    if use.sum() < min_points:
        raise FitError(f"only {int(use.sum())} grid points in [{lo:.3g}, {hi:.3g}] with "
                       f"N >= {min_count}; need {min_points}")
    t, y = T[use], np.log(N[use])
    frozen = beta is not None or not fit_beta
    b_val = 0.0 if beta is None else float(beta)
    if frozen:
        X = np.column_stack([t, np.ones_like(t)])
        rhs = y - b_val * np.log(t)
    else:
        X = np.column_stack([t, np.log(t), np.ones_like(t)])
        rhs = y
    coef, *_ = np.linalg.lstsq(X, rhs, rcond=None)
    resid = rhs - X @ coef
    dof = max(1, len(t) - X.shape[1])
    sigma2 = float(resid @ resid) / dof
    try:
        cov = sigma2 * np.linalg.inv(X.T @ X)
    except np.linalg.LinAlgError:
        raise FitError("degenerate design matrix") from None
    se = np.sqrt(np.clip(np.diagonal(cov), 0.0, None))
    rms = float(np.sqrt(np.mean(resid ** 2)))
    if frozen:
        return FitResult(float(coef[0]), b_val, float(coef[1]), (float(lo), float(hi)), rms,
                         float(se[0]), 0.0, float(se[1]), int(len(t)), True)
    return FitResult(float(coef[0]), float(coef[1]), float(coef[2]), (float(lo), float(hi)), rms,
                     float(se[0]), float(se[1]), float(se[2]), int(len(t)), False)
