"""Independent numeric oracles shared by the tests."""

import numpy as np
from scipy.optimize import minimize_scalar


def argmin_1d(f, lo, hi):
    """Bounded scalar minimizer refined to near machine precision."""
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12, "maxiter": 500})
    return float(res.x)


def mann_whitney_auc(scores, labels):
    """P(score_changed > score_unchanged) + 0.5 P(tie), by pairwise comparison."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    pos, neg = s[y], s[~y]
    diff = pos[:, None] - neg[None, :]
    return float((np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size)


def roc_by_enumeration(scores, labels):
    """(pfa, pd) for every threshold in {+inf} + distinct scores, rule score >= t."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    pts = []
    for t in [np.inf] + sorted(set(s.tolist()), reverse=True):
        det = s >= t
        pts.append((np.sum(det & ~y) / np.sum(~y), np.sum(det & y) / np.sum(y)))
    return np.array(pts)


def central_difference(f, x, step=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = f(x)
        x[idx] = orig - step
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * step)
    return g


def argmin_convex_1d(fprime, lo, hi):
    """Minimizer of a convex function on [lo, hi] from its derivative (root bracketing)."""
    from scipy.optimize import brentq
    if fprime(lo) >= 0:
        return float(lo)
    if fprime(hi) <= 0:
        return float(hi)
    return float(brentq(fprime, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))
