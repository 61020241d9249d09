"""Independent reference implementations used as test oracles.

These deliberately avoid the package's numerics: plain powers instead of the
expm1 ratio, an exhaustive grid instead of golden-section search, and
scipy's GPD instead of the package's quantile function.
"""
import math

import numpy as np
from scipy import optimize, stats

PSI_LO, PSI_HI = -4.5, 4.5


def model_u(xi, n=20, positions="estimation"):
    """Model curve ``u_1..u_{N/2-1}`` by direct powers, ``xi = 0`` by its log limit."""
    j = np.arange(1, n + 1, dtype=float)
    g = (j - 0.5) / n if positions == "estimation" else j / (n + 1)
    h = n // 2
    gi = g[: h - 1]
    if xi == 0:
        return np.log(g[h - 1] / gi) / np.log(g[n - 1] / g[h - 1])
    return ((g[h - 1] / gi) ** xi - 1) / (1 - (g[h - 1] / g[n - 1]) ** xi)


def rss(psi, u, n=20):
    return float(np.sum((np.log1p(u) - np.log1p(model_u(math.sinh(psi), n))) ** 2))


def normalized(x):
    x = np.sort(np.asarray(x, dtype=float))[::-1]
    n = x.size
    mid, low = x[n // 2 - 1], x[n - 1]
    return (x[: n // 2 - 1] - mid) / (mid - low)


class GridFit:
    """Exhaustive minimizer: every psi on a 1e-4 grid, then a bounded scalar refine."""

    def __init__(self, n=20, step=1e-4):
        self.n = n
        k = int(round((PSI_HI - PSI_LO) / step))
        self.grid = np.linspace(PSI_LO, PSI_HI, k + 1)
        self.step = step
        self.logs = np.log1p(np.array([model_u(math.sinh(p), n) for p in self.grid]))

    def __call__(self, x):
        u = normalized(x)
        resid = np.log1p(u)[None, :] - self.logs
        values = np.einsum("gi,gi->g", resid, resid)
        k = int(np.argmin(values))
        lo = max(self.grid[k] - self.step, PSI_LO)
        hi = min(self.grid[k] + self.step, PSI_HI)
        res = optimize.minimize_scalar(lambda p: rss(p, u, self.n), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-12})
        return (res.x, res.fun) if res.fun <= values[k] else (self.grid[k], values[k])


def gpd_sample(xi, uniforms, mu=0.0, sigma=1.0):
    """Inverse-transform GPD values through scipy's survival-function inverse."""
    return stats.genpareto(c=xi, loc=mu, scale=sigma).isf(uniforms)
