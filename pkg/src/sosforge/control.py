"""Control function r(x) and the runtime checks built on it.

r(x) is the largest of the even-order positive parts
``sup_{|xi|=1} [d^j_xi f(x)]_+ ** (1/(k-j+alpha))``.  It sets the local length
scale for the cube partition and for every pointwise estimate downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import factorial

import numpy as np

from .field import Field, gradient_tensor_norm
from .jet import multi_factorial, multi_indices
from .report import CheckReport, stable
from .sampling import box_points, local_pairs

DEFAULT_NU = 0.05
DEFAULT_LAMBDA = 1.25
ANGULAR_GRID = 720
ANGLE_TOL = 1e-10
TINY = 1e-300
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _form_coefficients(f: Field, pts: np.ndarray, j: int, table=None) -> list[tuple[tuple[int, ...], np.ndarray]]:
    """Pairs (beta, (j!/beta!) d^beta f) for |beta| = j."""
    out = []
    for beta in multi_indices(f.n, j):
        d = table[beta] if table is not None else np.asarray(f.deriv(beta, pts))
        out.append((beta, d * (factorial(j) / multi_factorial(beta))))
    return out


def _eval_form(coefs, directions: np.ndarray) -> np.ndarray:
    """Evaluate the degree-j forms at directions; directions (m, q, n) -> (m, q)."""
    total = 0.0
    for beta, c in coefs:
        mono = np.ones(directions.shape[:2])
        for i, b in enumerate(beta):
            if b:
                mono = mono * directions[:, :, i] ** b
        total = total + c[:, None] * mono
    return total


def _golden_max(fn, lo: np.ndarray, hi: np.ndarray, tol: float) -> np.ndarray:
    a, b = lo.copy(), hi.copy()
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while np.max(b - a) > tol:
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - GOLDEN * (b - a)
        new_d = a + GOLDEN * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        fc_next = np.where(left, fn(new_c), fd)
        fd_next = np.where(left, fc, fn(new_d))
        c, d, fc, fd = c_next, d_next, fc_next, fd_next
    return np.maximum(fc, fd)


def _sphere_points(n: int, count: int) -> np.ndarray:
    """Deterministic near-uniform directions on S^{n-1} (Fibonacci-style lattice)."""
    from .sampling import halton

    u = halton(n, count)
    # Box-Muller style mapping of the low-discrepancy points.
    from scipy.special import ndtri

    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _sphere_sup_forms(coefs, n: int, m: int) -> np.ndarray:
    if n == 2:
        theta = np.linspace(0.0, math.pi, ANGULAR_GRID, endpoint=False)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        vals = _eval_form(coefs, np.broadcast_to(dirs, (m,) + dirs.shape))
        best = np.argmax(vals, axis=1)
        step = math.pi / ANGULAR_GRID
        center = theta[best]

        def along(t):
            d = np.stack([np.cos(t), np.sin(t)], axis=1)[:, None, :]
            return _eval_form(coefs, d)[:, 0]

        refined = _golden_max(along, center - step, center + step, ANGLE_TOL)
        return np.maximum(refined, vals.max(axis=1))
    dirs = _sphere_points(n, 4000)
    vals = _eval_form(coefs, np.broadcast_to(dirs, (m,) + dirs.shape))
    best = dirs[np.argmax(vals, axis=1)]
    best_val = vals.max(axis=1)
    step = 0.05
    basis = np.eye(n)
    # Coordinate pattern search on the sphere around the grid argmax.
    while step > 1e-9:
        improved = np.zeros(m, dtype=bool)
        for e in basis:
            for sgn in (1.0, -1.0):
                cand = best + sgn * step * e
                cand /= np.linalg.norm(cand, axis=1, keepdims=True)
                v = _eval_form(coefs, cand[:, None, :])[:, 0]
                better = v > best_val
                best = np.where(better[:, None], cand, best)
                best_val = np.where(better, v, best_val)
                improved |= better
        if not improved.any():
            step *= 0.5
    return best_val


def sphere_sup_positive_part(f: Field, x, j: int, table=None):
    """sup over unit xi of the positive part of the j-th directional derivative."""
    if j % 2:
        raise ValueError("only even orders enter the control function")
    if j < 0 or j > f.smoothness.k:
        raise ValueError(f"order {j} must lie in [0, k = {f.smoothness.k}]")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    scalar = np.ndim(x) == 1
    m, n = pts.shape
    if j == 0:
        vals = table[(0,) * n] if table is not None else np.asarray(f.eval(pts))
        out = np.maximum(vals, 0.0)
    elif n == 1:
        vals = table[(j,)] if table is not None else np.asarray(f.deriv((j,), pts))
        out = np.maximum(vals, 0.0)
    elif j == 2:
        hess = np.empty((m, n, n))
        for a in range(n):
            for b in range(a, n):
                beta = tuple((a == i) + (b == i) for i in range(n))
                d = table[beta] if table is not None else np.asarray(f.deriv(beta, pts))
                hess[:, a, b] = d
                hess[:, b, a] = d
        out = np.maximum(np.linalg.eigvalsh(hess)[:, -1], 0.0)
    else:
        out = np.maximum(_sphere_sup_forms(_form_coefficients(f, pts, j, table), n, m), 0.0)
    return float(out[0]) if scalar else out


def control_branches(f: Field, pts: np.ndarray) -> dict[int, np.ndarray]:
    """Each even-order term sup_xi [d^j_xi f]_+^(1/(k-j+alpha)) at the points."""
    s = f.smoothness
    k, alpha = s.k, float(s.alpha)
    top = k - (k % 2)
    table = f.derivative_table(pts, top)
    out = {}
    for j in range(0, k + 1, 2):
        sup = sphere_sup_positive_part(f, pts, j, table)
        out[j] = sup ** (1.0 / (k - j + alpha))
    return out


@dataclass(frozen=True)
class ControlFunction:
    source: Field
    nu: float = DEFAULT_NU
    omega: float = 1.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.omega >= 0:
            raise ValueError("omega must be non-negative")

    @property
    def smoothness(self):
        return self.source.smoothness

    def eval(self, x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        branches = control_branches(self.source, pts)
        out = np.max(np.stack(list(branches.values())), axis=0)
        return float(out[0]) if np.ndim(x) == 1 else out

    __call__ = eval

    def with_omega(self, omega: float) -> "ControlFunction":
        return ControlFunction(self.source, self.nu, omega)


class ConstantControl:
    """A prescribed constant control value, handy for testing the partition alone."""

    def __init__(self, value: float, n: int, nu: float = DEFAULT_NU):
        self.value = float(value)
        self.n = n
        self.nu = nu
        self.omega = 0.0

    def eval(self, x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(pts.shape[0], self.value)
        return float(out[0]) if np.ndim(x) == 1 else out

    __call__ = eval


def control_value(r: ControlFunction, x):
    return r.eval(x)


def validate_slow_variation(r, box, samples: int) -> CheckReport:
    """Worst |r(x)-r(y)|/r(x) over pairs with |x-y| <= nu r(x); passes at 1/4."""
    if samples < 1:
        raise ValueError("samples must be positive")
    box = np.asarray(box, dtype=float)
    x, y, outside = local_pairs(box, samples, lambda p: r.nu * np.asarray(r.eval(p)))
    rx = np.asarray(r.eval(x)) if len(x) else np.zeros(0)
    ry = np.asarray(r.eval(y)) if len(y) else np.zeros(0)
    usable = rx > TINY
    ratios = np.abs(rx[usable] - ry[usable]) / rx[usable]
    worst = float(ratios.max()) if ratios.size else 0.0
    return CheckReport(
        name="slow_variation",
        passed=worst <= 0.25,
        worst=worst,
        threshold=0.25,
        samples=int(np.count_nonzero(usable)),
        skipped=int(np.count_nonzero(~usable)) + outside,
        details={"nu": r.nu, "vacuous": not bool(ratios.size)},
    )


def fit_omega(f: Field, nu: float, box, samples: int = 2000, r: ControlFunction | None = None,
              floor: float = TINY) -> float:
    """Twice the sampled constant C in |f(x)-f(y)| <= C nu r(x)^(k+alpha), |x-y| <= nu r(x).

    Points with r(x) <= floor are ignored.
    """
    r = r or ControlFunction(f, nu, 1.0)
    total = float(f.smoothness.total)
    box = np.asarray(box, dtype=float)
    x, y, _ = local_pairs(box, samples, lambda p: nu * np.asarray(r.eval(p)))
    if not len(x):
        return 0.0
    rx = np.asarray(r.eval(x))
    usable = rx > max(floor, TINY)
    if not usable.any():
        return 0.0
    diff = np.abs(np.asarray(f.eval(x[usable])) - np.asarray(f.eval(y[usable])))
    return 2.0 * float(np.max(diff / (nu * rx[usable] ** total)))


def _ratio_max(num: np.ndarray, den: np.ndarray) -> tuple[float, int]:
    usable = den > TINY
    if not usable.any():
        return 0.0, int(np.count_nonzero(~usable))
    return float(np.max(num[usable] / den[usable])), int(np.count_nonzero(~usable))


def check_derivative_control(f: Field, r: ControlFunction, box, ell: int, samples: int) -> CheckReport:
    """Fit C in |grad^ell f| <= C r^(k-ell+alpha) and test its stability under doubling."""
    s = f.smoothness
    if ell > s.k:
        raise ValueError("ell must not exceed k")
    exponent = s.k - ell + float(s.alpha)
    fits = []
    skipped = 0
    for count in (samples, 2 * samples):
        pts = box_points(box, count)
        num = gradient_tensor_norm(f, ell, pts)
        den = np.asarray(r.eval(pts)) ** exponent
        c, skipped = _ratio_max(num, den)
        fits.append(c)
    ok = stable(*fits)
    return CheckReport(
        name=f"derivative_control_order_{ell}",
        passed=ok,
        worst=fits[1],
        threshold=float("inf"),
        samples=2 * samples,
        fitted_C=fits[1],
        skipped=skipped,
        details={"fit_small": fits[0], "fit_large": fits[1]},
    )


def check_needed_condition(f: Field, box, samples: int, slack: float = 1e-9) -> bool:
    """Whether r is dominated by its order-0 and order-2 branches, plus the growth gate for k >= 4."""
    return needed_condition_report(f, box, samples, slack).passed


def needed_condition_report(f: Field, box, samples: int, slack: float = 1e-9) -> CheckReport:
    s = f.smoothness
    if s.k <= 3:
        return CheckReport("needed_condition", True, 0.0, 0.0, 0, details={"automatic": True})
    pts = box_points(box, samples)
    branches = control_branches(f, pts)
    r = np.max(np.stack(list(branches.values())), axis=0)
    low = np.maximum(branches[0], branches[2])
    excess = r - low
    domination_ok = bool(np.all(excess <= slack * (1.0 + np.abs(low))))
    total = float(s.total)
    fits = {}
    growth_ok = True
    for ell in range(4, s.k + 1, 2):
        exponent = (s.k - ell + float(s.alpha)) / total
        pair = []
        for count in (samples, 2 * samples):
            q = box_points(box, count)
            num = gradient_tensor_norm(f, ell, q)
            den = np.maximum(np.asarray(f.eval(q)), 0.0) ** exponent
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(den > TINY, num / np.where(den > TINY, den, 1.0), np.where(num > TINY, np.inf, 0.0))
            pair.append(float(np.max(ratio)))
        fits[ell] = pair
        growth_ok &= stable(*pair)
    worst = float(np.max(excess / (1.0 + np.abs(low))))
    return CheckReport(
        name="needed_condition",
        passed=domination_ok and growth_ok,
        worst=worst,
        threshold=slack,
        samples=samples,
        details={"domination": domination_ok, "growth_fits": fits, "growth_ok": growth_ok},
    )
