"""From raw logs to findings: training regimes, noise rescaling, collapse, slopes and plateaus."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import InvalidParameterError
from .observables import MsdCurveSet

GRID_PER_DECADE = 20
THETA = 0.2
EPS_LOSS = 0.05


@dataclass
class RegimeReport:
    t1: Optional[float] = None
    t2: Optional[float] = None
    collapse_score_pre: Optional[float] = None
    collapse_score_post: Optional[float] = None
    late_slope: Optional[float] = None
    plateau_q: Optional[float] = None


def _positive_times(t, y):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = t > 0
    return t[keep], y[keep]


def window_slopes(x: np.ndarray, y: np.ndarray, window: int = 5) -> np.ndarray:
    """Least-squares slope of y vs x in a centred window, truncated at the ends."""
    h = window // 2
    n = x.size
    out = np.empty(n)
    for i in range(n):
        lo, hi = max(0, i - h), min(n, i + h + 1)
        xs, ys = x[lo:hi], y[lo:hi]
        dx = xs - xs.mean()
        den = float(np.dot(dx, dx))
        out[i] = float(np.dot(dx, ys - ys.mean())) / den if den > 0 else 0.0
    return out


def detect_regimes(t, loss, theta: float = THETA, eps_loss: float = EPS_LOSS,
                   window: int = 5) -> tuple[Optional[float], Optional[float]]:
    """Crossover times (t1, t2) of a loss curve measured on a log-spaced schedule.

    t1 is the first time the windowed slope dL/dlog10(t) drops below
    ``-theta * s0``, s0 being the steepest descent rate on the curve.  t2 is the
    first later time at which either the loss is within ``eps_loss`` of its
    minimum over the run or the descent rate falls back under ``theta * s0``.
    Times <= 0 are ignored.
    """
    t, y = _positive_times(t, loss)
    if t.size < 10:
        raise InvalidParameterError(f"need at least 10 positive-time points, got {t.size}")
    slopes = window_slopes(np.log10(t), y, window)
    s0 = float(np.max(-slopes))
    if not s0 > 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        return None, None
    steep = np.nonzero(slopes < -theta * s0)[0]
    if steep.size == 0:
        return None, None
    i1 = int(steep[0])
    floor = float(np.min(y))
    for i in range(i1 + 1, t.size):
        if y[i] - floor < eps_loss or slopes[i] > -theta * s0:
            return float(t[i1]), float(t[i])
    return float(t[i1]), None


def log_linear_fit(t, y, t_lo: float, t_hi: float) -> tuple[float, float]:
    """Slope of y vs log10(t) on [t_lo, t_hi] and the R^2 of that straight line."""
    t, y = _positive_times(t, y)
    keep = (t >= t_lo) & (t <= t_hi)
    if keep.sum() < 3:
        raise InvalidParameterError("fewer than 3 points in the fitting range")
    x, ys = np.log10(t[keep]), y[keep]
    slope, icpt = np.polyfit(x, ys, 1)
    resid = ys - (slope * x + icpt)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def rescale_by_noise(curves: MsdCurveSet, noise: Mapping) -> MsdCurveSet:
    """Divide every curve by the noise D measured at its waiting time."""
    out = MsdCurveSet(curves.system)
    for tw, (t, d) in curves.curves.items():
        if tw not in noise:
            raise InvalidParameterError(f"no noise measurement for t_w={tw}")
        D = float(noise[tw])
        if not D > 0:
            raise InvalidParameterError(f"noise D(t_w={tw}) = {D} cannot be used for rescaling")
        out.curves[tw] = (t.copy(), d / D)
        out.D[tw] = D
    return out


def _log_grid(curves: MsdCurveSet):
    """Common log10-t grid and each curve's log Delta on it (nan outside its support)."""
    logs = []
    for t, d in curves.curves.values():
        keep = (t > 0) & (d > 0)
        if keep.sum() >= 2:
            logs.append((np.log10(t[keep]), np.log(d[keep])))
    if not logs:
        return np.empty(0), np.empty((0, 0))
    lo = min(x[0] for x, _ in logs)
    hi = max(x[-1] for x, _ in logs)
    k0 = math.ceil(lo * GRID_PER_DECADE - 1e-9)
    k1 = math.floor(hi * GRID_PER_DECADE + 1e-9)
    grid = np.arange(k0, k1 + 1) / GRID_PER_DECADE
    values = np.full((len(logs), grid.size), np.nan)
    for c, (x, ly) in enumerate(logs):
        inside = (grid >= x[0] - 1e-12) & (grid <= x[-1] + 1e-12)
        values[c, inside] = np.interp(grid[inside], x, ly)
    return grid, values


def collapse_score(curves: MsdCurveSet) -> float:
    """Mean over the log-t grid of the across-curve variance of log Delta.

    Each grid point uses the curves whose time range covers it, provided there
    are at least two.  Zero means the curves lie on top of each other.
    """
    if len(curves) < 2:
        raise InvalidParameterError("collapse score needs at least 2 curves")
    grid, values = _log_grid(curves)
    if grid.size == 0:
        raise InvalidParameterError("no curve has positive support")
    covered = np.sum(~np.isnan(values), axis=0)
    ok = covered >= 2
    if not ok.any():
        raise InvalidParameterError("curves have no overlapping t support")
    v = values[:, ok]
    return float(np.mean(np.nanvar(v, axis=0)))


def fit_late_slope(t, delta, decades: float = 1.0, t_max: Optional[float] = None) -> float:
    """Log-log slope of Delta vs t over the last ``decades`` of the curve (up to ``t_max``)."""
    t, d = _positive_times(t, delta)
    if t_max is not None:
        keep = t <= t_max
        t, d = t[keep], d[keep]
    if t.size == 0:
        raise InvalidParameterError("no points in the fitting window")
    keep = (t >= t[-1] / 10**decades) & (d > 0)
    if keep.sum() < 5:
        raise InvalidParameterError(f"need at least 5 points in the last decade, got {int(keep.sum())}")
    slope, _ = np.polyfit(np.log(t[keep]), np.log(d[keep]), 1)
    return float(slope)


def estimate_plateau(curves: MsdCurveSet, slope_tol: float = 0.1,
                     min_decades: float = 0.5) -> Optional[float]:
    """Height of the earliest flat region shared by at least two curves.

    A grid point is flat for a curve when its local log-log slope is below
    ``slope_tol`` in magnitude.  The flat region must hold for >= 2 curves at
    every point over at least ``min_decades``; the mean Delta over the flat
    entries is returned.
    """
    if len(curves) < 2:
        return None
    grid, values = _log_grid(curves)
    if grid.size < 3:
        return None
    slopes = np.full_like(values, np.nan)
    for c in range(values.shape[0]):
        ok = ~np.isnan(values[c])
        idx = np.nonzero(ok)[0]
        if idx.size >= 3:
            # d ln(Delta) / d ln(t) on the grid
            slopes[c, idx] = np.gradient(values[c, idx], grid[idx] * math.log(10))
    flat = np.abs(slopes) < slope_tol
    shared = flat.sum(axis=0) >= 2
    need = int(round(min_decades * GRID_PER_DECADE))
    run_start = None
    for i in range(grid.size + 1):
        if i < grid.size and shared[i]:
            if run_start is None:
                run_start = i
            continue
        if run_start is not None and i - 1 - run_start >= need:
            sel = flat[:, run_start:i]
            return float(np.mean(np.exp(values[:, run_start:i][sel])))
        run_start = None
    return None


def decorrelation_time(t, delta, threshold: float = 1.0) -> Optional[float]:
    """First t at which Delta exceeds ``threshold``, log-log interpolated between samples."""
    t, d = _positive_times(t, delta)
    above = np.nonzero(d > threshold)[0]
    if above.size == 0:
        return None
    i = int(above[0])
    if i == 0 or d[i - 1] <= 0:
        return float(t[i])
    x0, x1 = math.log(t[i - 1]), math.log(t[i])
    y0, y1 = math.log(d[i - 1]), math.log(d[i])
    f = (math.log(threshold) - y0) / (y1 - y0)
    return float(math.exp(x0 + f * (x1 - x0)))


def regime_report(loss_t, loss, curves: Optional[MsdCurveSet], noise: Optional[Mapping] = None,
                  theta: float = THETA, eps_loss: float = EPS_LOSS, window: int = 5,
                  slope_t_max: Optional[float] = None) -> RegimeReport:
    """Assemble the full report for one run.

    Curves with t_w < t2 are compared unrescaled, curves with t_w > t2 after
    rescaling by D(t_w).  Without a detected t2 every curve counts as
    "pre"; the slope and plateau are then taken over all curves.
    """
    rep = RegimeReport()
    t_pos, _ = _positive_times(loss_t, loss)
    if t_pos.size >= 10:
        rep.t1, rep.t2 = detect_regimes(loss_t, loss, theta, eps_loss, window)
    if curves is None or len(curves) == 0:
        return rep
    t2 = rep.t2
    pre = curves.subset(lambda tw: t2 is None or tw < t2)
    post = curves.subset(lambda tw: t2 is not None and tw > t2)
    rep.collapse_score_pre = _safe_collapse(pre)
    late_set = post if t2 is not None else curves
    if noise is not None and len(late_set):
        try:
            late_set = rescale_by_noise(late_set, noise)
        except InvalidParameterError:
            late_set = None
    if late_set is not None and t2 is not None:
        rep.collapse_score_post = _safe_collapse(late_set)
    if late_set is not None and len(late_set):
        slopes = []
        for t, d in late_set.curves.values():
            try:
                slopes.append(fit_late_slope(t, d, t_max=slope_t_max))
            except InvalidParameterError:
                pass
        rep.late_slope = float(np.mean(slopes)) if slopes else None
        rep.plateau_q = estimate_plateau(post if t2 is not None else curves)
    return rep


def _safe_collapse(curves: MsdCurveSet) -> Optional[float]:
    if len(curves) < 2:
        return None
    try:
        return collapse_score(curves)
    except InvalidParameterError:
        return None
