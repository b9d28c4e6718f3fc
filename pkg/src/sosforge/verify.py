"""Sampled checks of the inequalities behind the construction and of the squares it produces.

Every check is deterministic: points come from the prefix-stable Halton
schedule, so doubling a sample size only appends points and two runs give
identical reports.  Fitted constants are accepted when they are finite and move
by less than 10% when the sample is doubled.
"""

from __future__ import annotations

import math
import numpy as np

from .control import ControlFunction, check_derivative_control
from .field import Field, SmoothnessClass, pairwise_quotient_max
from .jet import Jet, multi_factorial, multi_indices
from .report import CheckReport, stable
from .sampling import ball_points, box_points, grid_points, halton

RESIDUAL_TOLERANCE = 1e-8
NEIGHBOURS = 12


def _box(box) -> np.ndarray:
    return np.asarray(box, dtype=float)


def sample_pairs(box, count: int, near: float = 0.02, offset: int = 0):
    """Half independent pairs, half pairs at most ``near`` times the box diameter apart."""
    box = _box(box)
    n = box.shape[0]
    far = count // 2
    u = halton(2 * n, far, offset)
    x1 = box[:, 0] + u[:, :n] * (box[:, 1] - box[:, 0])
    y1 = box[:, 0] + u[:, n:] * (box[:, 1] - box[:, 0])
    v = halton(2 * n + 1, count - far, offset)
    x2 = box[:, 0] + v[:, :n] * (box[:, 1] - box[:, 0])
    d = 2.0 * v[:, n:2 * n] - 1.0
    norms = np.linalg.norm(d, axis=1)
    norms[norms == 0] = 1.0
    radius = near * float(np.linalg.norm(box[:, 1] - box[:, 0]))
    y2 = x2 + (v[:, 2 * n] * radius / norms)[:, None] * d
    y2 = np.clip(y2, box[:, 0], box[:, 1])
    return np.concatenate([x1, x2]), np.concatenate([y1, y2])


def _values(fn, pts) -> np.ndarray:
    return np.asarray(fn.eval(pts) if isinstance(fn, Field) else fn(pts), dtype=float).reshape(-1)


def _vector_quotient_max(vectors: np.ndarray, pts: np.ndarray, lam: float, chunk: int = 512) -> float:
    best = 0.0
    for a in range(0, len(pts), chunk):
        dv = np.linalg.norm(vectors[a:a + chunk, None, :] - vectors[None, :, :], axis=2)
        dist = np.linalg.norm(pts[a:a + chunk, None, :] - pts[None, :, :], axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = dv / dist**lam
        q = q[(dist > 0) & np.isfinite(q)]
        if q.size:
            best = max(best, float(q.max()))
    return best


def _pair_quotients(fx, fy, x, y, lam) -> np.ndarray:
    dist = np.linalg.norm(x - y, axis=1)
    diff = np.abs(fx - fy) if fx.ndim == 1 else np.linalg.norm(fx - fy, axis=1)
    out = np.zeros(len(dist))
    ok = dist > 0
    out[ok] = diff[ok] / dist[ok] ** lam
    return out


# reconstruction


def check_reconstruction(dec, f: Field, grid, omit=()) -> CheckReport:
    """Worst |sum g^2 - f| on the grid points where the decomposition is certified.

    ``grid`` is either an array of points or a per-axis count for a tensor grid
    over the decomposition box.  Classes listed in ``omit`` are left out of the sum.
    """
    pts = grid_points(dec.box, int(grid)) if np.isscalar(grid) else np.atleast_2d(np.asarray(grid, dtype=float))
    mask = dec.certified(pts)
    fv = _values(f, pts)
    vals = dec.evaluate(pts)
    keep = [c for c in range(len(vals)) if c not in set(omit)]
    total = np.sum(vals[keep] ** 2, axis=0) if keep else np.zeros(len(pts))
    err = np.abs(total - fv)[mask]
    worst = float(err.max()) if err.size else 0.0
    threshold = RESIDUAL_TOLERANCE * (1.0 + float(np.max(np.abs(fv))) if len(fv) else 1.0)
    return CheckReport(
        "reconstruction",
        worst <= threshold,
        worst,
        threshold,
        int(mask.sum()),
        details={"grid_points": len(pts), "omitted": list(omit), "classes": int(len(vals))},
    )


# inequality suites


def power_difference_constant(seminorm: float, s: float, epsilon: float) -> float:
    return (1.0 + epsilon) * seminorm**s / ((1.0 + epsilon) ** (1.0 / (s - 1.0)) - 1.0) ** (s - 1.0)


def check_power_difference(fn, alpha, s: float, epsilon: float, pairs, seminorm: float | None = None) -> CheckReport:
    """|f(x)^s - f(y)^s| <= C_eps [f]_alpha^s |x-y|^(s alpha) + eps max(f(x)^s, f(y)^s) on every pair.

    The seminorm is estimated from the pairs themselves together with all pairs
    of a subsample of their endpoints, unless it is given.
    """
    if s <= 1 or epsilon <= 0:
        raise ValueError("need s > 1 and epsilon > 0")
    alpha = float(alpha)
    x, y = (np.atleast_2d(np.asarray(p, dtype=float)) for p in pairs)
    fx, fy = _values(fn, x), _values(fn, y)
    if np.any(fx < 0) or np.any(fy < 0):
        raise ValueError("the function must be non-negative")
    if seminorm is None:
        pool = np.concatenate([x[:400], y[:400]])
        seminorm = max(
            float(_pair_quotients(fx, fy, x, y, alpha).max(initial=0.0)),
            pairwise_quotient_max(_values(fn, pool), pool, alpha),
        )
    dist = np.linalg.norm(x - y, axis=1)
    lhs = np.abs(fx**s - fy**s)
    rhs = power_difference_constant(seminorm, s, epsilon) * dist ** (s * alpha) + epsilon * np.maximum(fx, fy) ** s
    slack = 1e-12 * (1.0 + float(np.max(np.maximum(fx, fy) ** s, initial=0.0)))
    excess = lhs - rhs
    worst = float(excess.max(initial=-np.inf))
    return CheckReport(
        "power_difference",
        bool(np.all(excess <= slack)),
        worst,
        slack,
        len(dist),
        fitted_C=seminorm,
        details={"s": s, "epsilon": epsilon, "alpha": alpha},
    )


def _segment_seminorm(f: Field, beta, x, y, alpha: float, steps: int = 16) -> float:
    base = np.asarray(f.deriv(beta, x))
    best = 0.0
    for t in np.arange(1, steps + 1) / steps:
        z = x + t * (y - x)
        best = max(best, float(_pair_quotients(base, np.asarray(f.deriv(beta, z)), x, z, alpha).max(initial=0.0)))
    return best


def check_taylor_gap(f: Field, beta, pairs, box=None, samples: int = 600) -> CheckReport:
    """|d^b f(x) - d^b f(y)| <= sum_{1<=|g|<=m} |x-y|^|g| |d^(b+g) f(x)| / g! + C |x-y|^(m+alpha), m = k - |b|.

    C sums [d^(b+g) f]_alpha / g! over |g| = m, each seminorm estimated along the
    tested segments and, when a box is given, over all pairs of a box sample.
    """
    s = f.smoothness
    beta = tuple(int(b) for b in beta)
    if len(beta) != s.n or sum(beta) >= s.k:
        raise ValueError("need |beta| < k")
    alpha = float(s.alpha)
    m = s.k - sum(beta)
    x, y = (np.atleast_2d(np.asarray(p, dtype=float)) for p in pairs)
    dist = np.linalg.norm(x - y, axis=1)
    shifted = lambda g: tuple(a + b for a, b in zip(beta, g))  # noqa: E731
    rhs = np.zeros(len(dist))
    for order in range(1, m + 1):
        for g in multi_indices(s.n, order):
            rhs += dist**order * np.abs(np.asarray(f.deriv(shifted(g), x))) / multi_factorial(g)
    constant = 0.0
    seminorms = {}
    pool = None if box is None else box_points(box, samples)
    for g in multi_indices(s.n, m):
        est = _segment_seminorm(f, shifted(g), x, y, alpha)
        if pool is not None:
            est = max(est, pairwise_quotient_max(np.asarray(f.deriv(shifted(g), pool)), pool, alpha))
        seminorms[str(g)] = est
        constant += est / multi_factorial(g)
    rhs += constant * dist ** (m + alpha)
    lhs = np.abs(np.asarray(f.deriv(beta, x)) - np.asarray(f.deriv(beta, y)))
    slack = 1e-10 * (1.0 + float(np.max(np.abs(np.asarray(f.deriv(beta, x))), initial=0.0)))
    excess = lhs - rhs
    return CheckReport(
        f"taylor_gap_{''.join(map(str, beta))}",
        bool(np.all(excess <= slack)),
        float(excess.max(initial=-np.inf)),
        slack,
        len(dist),
        fitted_C=constant,
        details={"seminorms": seminorms},
    )


def gradient_bound_factor(alpha: float) -> float:
    return alpha ** (1.0 / (1.0 + alpha)) + alpha ** (-alpha / (1.0 + alpha))


def check_gradient_bound(f: Field, alpha, samples: int, box) -> CheckReport:
    """|grad f| <= [grad f]_alpha^(1/(1+alpha)) f^(alpha/(1+alpha)) (alpha^(1/(1+alpha)) + alpha^(-alpha/(1+alpha)))."""
    box = _box(box)
    n = box.shape[0]
    alpha = float(alpha)
    pts = box_points(box, samples)
    units = [tuple(int(i == a) for i in range(n)) for a in range(n)]
    grad = np.stack([np.asarray(f.deriv(u, pts)) for u in units], axis=1)
    fv = _values(f, pts)
    if np.any(fv < -1e-14):
        raise ValueError("the function must be non-negative")
    pool = pts[: min(samples, 800)]
    seminorm = _vector_quotient_max(grad[: len(pool)], pool, alpha)
    # Short steps against the gradient, where the estimate is used.
    norms = np.linalg.norm(grad, axis=1)
    direction = np.where(norms[:, None] > 0, grad / np.where(norms > 0, norms, 1.0)[:, None], 0.0)
    diam = float(np.linalg.norm(box[:, 1] - box[:, 0]))
    for t in (1e-3, 1e-2, 1e-1):
        z = pts - t * diam * direction
        gz = np.stack([np.asarray(f.deriv(u, z)) for u in units], axis=1)
        seminorm = max(seminorm, float(_pair_quotients(grad, gz, pts, z, alpha).max(initial=0.0)))
    bound = seminorm ** (1.0 / (1.0 + alpha)) * np.maximum(fv, 0.0) ** (alpha / (1.0 + alpha)) * gradient_bound_factor(alpha)
    slack = 1e-10 * (1.0 + float(norms.max(initial=0.0)))
    excess = norms - bound
    return CheckReport(
        "gradient_bound",
        bool(np.all(excess <= slack)),
        float(excess.max(initial=-np.inf)),
        slack,
        samples,
        fitted_C=seminorm,
        details={"alpha": alpha},
    )


# regularity of the squares


def _term_derivatives(term: Field, pts: np.ndarray, order: int) -> dict:
    jet = term.jet(Jet.variables(pts, order))
    return {b: jet.derivative(b) for b in jet.space.indices}


def half_regular_seminorms(term: Field, smoothness: SmoothnessClass, region, count: int) -> dict:
    """beta -> largest difference quotient of d^beta term at the half-regular exponent, over all sample pairs."""
    whole, lam = smoothness.half_order
    pts = box_points(region, count)
    table = _term_derivatives(term, pts, whole)
    return {b: pairwise_quotient_max(v, pts, float(lam)) for b, v in table.items() if sum(b) == whole}


def check_half_regularity(term: Field, smoothness: SmoothnessClass, region, samples: int = 1000) -> CheckReport:
    """Top-order difference quotients of a square at exponent (k+alpha)/2 - floor(k/2); finite and stable."""
    first = half_regular_seminorms(term, smoothness, region, samples)
    second = half_regular_seminorms(term, smoothness, region, 2 * samples)
    small, large = max(first.values(), default=0.0), max(second.values(), default=0.0)
    whole, lam = smoothness.half_order
    return CheckReport(
        f"half_regularity_{getattr(term, 'index', 0)}",
        stable(small, large),
        large,
        math.inf,
        2 * samples,
        fitted_C=large,
        details={"order": whole, "exponent": str(lam), "fit_small": small, "fit_large": large,
                 "per_beta": {str(b): v for b, v in second.items()}},
    )


# fitted regularity constants


def _fit_report(name: str, fits: list[float], samples: int, details=None) -> CheckReport:
    small, large = fits
    return CheckReport(name, stable(small, large), large, math.inf, samples, fitted_C=large,
                       details={"fit_small": small, "fit_large": large, **(details or {})})


def _offsets(n: int) -> np.ndarray:
    return ball_points(np.zeros(n), 1.0, NEIGHBOURS + 1)[1:]


def _neighbourhood(pts: np.ndarray, radius: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    offs = _offsets(pts.shape[1])
    around = (pts[:, None, :] + radius[:, None, None] * offs[None, :, :]).reshape(-1, pts.shape[1])
    return around, np.linalg.norm(offs, axis=1)


def _star(center_vals, around_vals, radius, offset_norms, lam) -> np.ndarray:
    dist = radius[:, None] * offset_norms[None, :]
    vals = around_vals.reshape(len(center_vals), -1)
    return np.max(np.abs(vals - center_vals[:, None]) / dist**lam, axis=1)


def _pair_lookup(pi, ci, width):
    keys = pi.astype(np.int64) * width + ci
    order = np.argsort(keys)
    return keys[order], order


def _bump_fits(partition, r, per_cube: int, order: int, alpha: float, cubes: list[int]) -> tuple[float, float]:
    pts = np.concatenate([box_points(_dilated_box(partition, j, partition.lam), per_cube) for j in cubes])
    rv = np.asarray(r.eval(pts))
    inputs = Jet.variables(pts, order)
    pi, ci, psi = partition.normalized_bump_jets(inputs)
    keep = (~partition.boundary[ci]) & (rv[pi] > partition.delta_cut)
    pi, ci = pi[keep], ci[keep]
    psi = psi.take(np.nonzero(keep)[0])
    radius = partition.nu * rv / (8.0 * math.sqrt(partition.n))
    around, norms = _neighbourhood(pts, np.where(rv > 0, radius, 1.0))
    api, aci, apsi = partition.normalized_bump_jets(Jet.variables(around, order))
    width = len(partition) + 1
    keys, perm = _pair_lookup(api, aci, width)
    values_fit = holder_fit = 0.0
    for b in psi.space.indices:
        size = sum(b)
        dv = np.abs(psi.derivative(b)) * rv[pi] ** size
        values_fit = max(values_fit, float(dv.max(initial=0.0)))
        # Neighbour values of the same psi_j; pairs missing from the lookup are zero.
        target = (pi[:, None] * NEIGHBOURS + np.arange(NEIGHBOURS)[None, :]).astype(np.int64) * width + ci[:, None]
        pos = np.searchsorted(keys, target.ravel())
        pos = np.minimum(pos, len(keys) - 1)
        hit = keys[pos] == target.ravel()
        flat = np.zeros(target.size)
        flat[hit] = apsi.derivative(b)[perm[pos[hit]]]
        quot = _star(psi.derivative(b), flat, radius[pi], norms, alpha)
        holder_fit = max(holder_fit, float((quot * rv[pi] ** (alpha + size)).max(initial=0.0)))
    return values_fit, holder_fit


def check_bump_estimates(partition, r, samples: int = 256, order: int = 2, alpha: float = 1.0,
                         max_cubes: int = 24) -> list[CheckReport]:
    """Fitted C in |d^b psi_j| <= C r^-|b| and [d^b psi_j]_alpha <= C r^(-alpha-|b|), |b| <= order.

    ``samples`` points are drawn in each of up to ``max_cubes`` dilated interior cubes.
    """
    cubes = _spread(np.nonzero(~partition.boundary)[0].tolist(), max_cubes)
    if not cubes:
        return []
    a = _bump_fits(partition, r, samples, order, alpha, cubes)
    b = _bump_fits(partition, r, 2 * samples, order, alpha, cubes)
    total = 2 * samples * len(cubes)
    return [
        _fit_report("bump_derivatives", [a[0], b[0]], total, {"order": order, "cubes": len(cubes)}),
        _fit_report("bump_holder", [a[1], b[1]], total, {"order": order, "alpha": alpha, "cubes": len(cubes)}),
    ]


def _spread(ids, limit: int) -> list[int]:
    ids = list(ids)
    if len(ids) <= limit:
        return ids
    step = len(ids) / limit
    return [ids[int(i * step)] for i in range(limit)]


def _interior_cubes(local, branch: str, limit: int) -> list[int]:
    p = local.partition
    ids = [rec.index for rec in local.cubes if rec.branch == branch and not p.boundary[rec.index]]
    return _spread(ids, limit)


def _dilated_box(partition, j: int, factor: float) -> np.ndarray:
    half = 0.5 * factor * partition.sides[j]
    return np.column_stack([partition.centers[j] - half, partition.centers[j] + half])


def _piece_fits(dec, branch: str, per_cube: int, cubes: list[int]) -> tuple[float, float]:
    local = dec.local
    s = dec.field.smoothness
    whole, lam = s.half_order
    lam = float(lam)
    total = float(s.total)
    p = local.partition
    values_fit = holder_fit = 0.0
    for j in cubes:
        pts = box_points(_dilated_box(p, j, p.lam), per_cube)
        rv = np.asarray(local.control.eval(pts))
        radius = p.nu * rv / (8.0 * math.sqrt(p.n))
        around, norms = _neighbourhood(pts, radius)
        here = local.piece_jets(Jet.variables(pts, whole), j)
        there = local.piece_jets(Jet.variables(around, whole), j)
        for s_idx, kind in enumerate(local.cubes[j].slots):
            if kind[0] not in ("root", "min"):
                continue
            jet, jet_around = here[s_idx], there[s_idx]
            for b in jet.space.indices:
                size = sum(b)
                d = jet.derivative(b)
                values_fit = max(values_fit, float((np.abs(d) / rv ** (total / 2.0 - size)).max()))
                quot = _star(d, jet_around.derivative(b), radius, norms, lam)
                holder_fit = max(holder_fit, float((quot / rv ** (whole - size)).max()))
    return values_fit, holder_fit


def check_piece_estimates(dec, samples: int = 64, max_cubes: int = 24) -> list[CheckReport]:
    """Fitted C in |d^b piece| <= C r^((k+alpha)/2-|b|) and [d^b piece]_half <= C r^(floor(k/2)-|b|).

    Pieces are psi_j sqrt(f) on root cubes and psi_j (z_n - X) sqrt(H) on minimum cubes,
    sampled on the dilated cubes of up to ``max_cubes`` interior cubes per branch.
    """
    out = []
    if dec.local is None:
        return out
    for branch in ("root", "min"):
        cubes = _interior_cubes(dec.local, branch, max_cubes)
        if not cubes:
            continue
        a = _piece_fits(dec, branch, samples, cubes)
        b = _piece_fits(dec, branch, 2 * samples, cubes)
        out.append(_fit_report(f"{branch}_piece_derivatives", [a[0], b[0]], 2 * samples * len(cubes), {"cubes": len(cubes)}))
        out.append(_fit_report(f"{branch}_piece_holder", [a[1], b[1]], 2 * samples * len(cubes), {"cubes": len(cubes)}))
    return out


def _remainder_fits(dec, per_cube: int, cubes: list[int]) -> tuple[float, float]:
    local = dec.local
    s = dec.field.smoothness
    alpha = float(s.alpha)
    total = float(s.total)
    p = local.partition
    values_fit = holder_fit = 0.0
    for j in cubes:
        data = local.cubes[j].data
        pts = box_points(_dilated_box(p, j, 2.0), per_cube)
        rv = np.asarray(local.control.eval(pts))
        z = (pts - data.center) @ data.rotation
        zp = z[:, :-1]
        radius = p.nu * rv / (8.0 * math.sqrt(p.n))
        around, norms = _neighbourhood(zp, radius)
        here = data.remainder.jet(Jet.variables(zp, s.k))
        there = data.remainder.jet(Jet.variables(around, s.k))
        for b in here.space.indices:
            size = sum(b)
            d = here.derivative(b)
            values_fit = max(values_fit, float((np.abs(d) / rv ** (total - size)).max()))
            quot = _star(d, there.derivative(b), radius, norms, alpha)
            holder_fit = max(holder_fit, float((quot / rv ** (s.k - size)).max()))
    return values_fit, holder_fit


def check_remainder_estimates(dec, samples: int = 64, max_cubes: int = 16) -> list[CheckReport]:
    """Fitted C in |d^b F| <= C r^(k+alpha-|b|) and [d^b F]_alpha <= C r^(k-|b|) on 2Q, |b| <= k."""
    if dec.local is None or dec.field.n < 2:
        return []
    cubes = _interior_cubes(dec.local, "min", max_cubes)
    if not cubes:
        return []
    a = _remainder_fits(dec, samples, cubes)
    b = _remainder_fits(dec, 2 * samples, cubes)
    return [
        _fit_report("remainder_derivatives", [a[0], b[0]], 2 * samples * len(cubes), {"cubes": len(cubes)}),
        _fit_report("remainder_holder", [a[1], b[1]], 2 * samples * len(cubes), {"cubes": len(cubes)}),
    ]


def check_control_ratios(f: Field, r: ControlFunction, box, samples: int = 2000) -> list[CheckReport]:
    """|grad^l f| <= C r^(k-l+alpha) for every l <= k."""
    return [check_derivative_control(f, r, box, ell, samples) for ell in range(1, f.smoothness.k + 1)]


def check_disjoint_supports(dec) -> CheckReport:
    """Pieces merged into one square must have disjoint support boxes, at every recursion depth."""
    clashes = []

    def walk(local, path):
        for j, rec in enumerate(local.cubes):
            mine = [(j, s) for s in range(len(rec.slots))]
            others = [(o, t) for o in local.partition.neighbors[j] for t in range(len(local.cubes[o].slots))]
            for a in mine:
                for b in mine + others:
                    if a >= b or local.class_of[a] != local.class_of[b]:
                        continue
                    if local._overlap(local.item_boxes[a], local.item_boxes[b]):
                        clashes.append({"path": path, "items": [list(map(str, a)), list(map(str, b))]})
            if rec.sub is not None:
                walk(rec.sub, path + [j])

    if dec.local is not None:
        walk(dec.local, [])
    return CheckReport("disjoint_supports", not clashes, float(len(clashes)), 0.0, 0, details={"clashes": clashes[:10]})


def regularity_suite(dec, samples: int = 64, control_samples: int = 2000, max_cubes: int = 16) -> list[CheckReport]:
    """Every fitted-constant check for one decomposition."""
    if dec.local is None:
        return []
    f = dec.field
    out = check_control_ratios(f, dec.local.control, dec.box, control_samples)
    out += check_bump_estimates(dec.local.partition, dec.local.control, 4 * samples, order=min(2, f.smoothness.k),
                                max_cubes=max_cubes)
    out += check_piece_estimates(dec, samples, max_cubes)
    out += check_remainder_estimates(dec, samples, max_cubes)
    return out


def verdict(reports: list[CheckReport]) -> dict:
    docs = [r.to_json() for r in reports]
    return {"pass": all(d["pass"] for d in docs), "checks": docs}
