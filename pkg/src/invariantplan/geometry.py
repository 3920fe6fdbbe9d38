"""Ellipsoid and polytope primitives, hulls of ellipsoids, and ellipsoid fusion.

Conventions
-----------
An ellipsoid is E(P, c) = {x : (x - c)^T P^{-1} (x - c) <= 1} with P symmetric
positive definite ("shape matrix").  A polytope is {x : F x <= g}.  The value
(x - c)^T P^{-1} (x - c) is called the gauge of x; membership means gauge <= 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.spatial
import scipy.special
from scipy.stats import qmc

from .errors import DegenerateHull, DomainError, NoOverlap

log = logging.getLogger(__name__)

MEMBERSHIP_RTOL = 1e-6  # relative tolerance on the quadratic form


def rotational_index(i: int, M: int) -> int:
    """Cyclic index map j = mod(i + M - 2, M) + 1 on {1, ..., M}."""
    if not (1 <= i <= M):
        raise DomainError(f"index {i} outside 1..{M}")
    return (i + M - 2) % M + 1


def _symmetrize(A):
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class Ellipsoid:
    """Ellipsoid E(P, c) with SPD shape matrix P."""

    P: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if P.shape != (c.size, c.size):
            raise DomainError(f"shape {P.shape} does not match center dim {c.size}")
        if np.max(np.abs(P - P.T)) > 1e-10 * max(1.0, np.max(np.abs(P))):
            raise DomainError("shape matrix not symmetric")
        P = _symmetrize(P)
        eigs = np.linalg.eigvalsh(P)
        if eigs[0] <= 0:
            raise DomainError(f"shape matrix not positive definite (min eig {eigs[0]:.3e})")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.center.size

    def gauge(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ np.linalg.solve(self.P, d))

    def contains(self, x, rtol: float = MEMBERSHIP_RTOL) -> bool:
        return self.gauge(x) <= 1.0 + rtol

    def sqrt_shape(self) -> np.ndarray:
        """Symmetric square root of P (maps the unit ball onto the ellipsoid)."""
        w, V = np.linalg.eigh(self.P)
        return (V * np.sqrt(w)) @ V.T

    def boundary_points(self, directions) -> np.ndarray:
        """Map unit directions through the symmetric square root onto the boundary."""
        U = np.atleast_2d(np.asarray(directions, dtype=float))
        return self.center + U @ self.sqrt_shape().T

    def support_point(self, h) -> np.ndarray:
        """Boundary point maximizing h^T x over the ellipsoid."""
        h = np.asarray(h, dtype=float)
        Ph = self.P @ h
        return self.center + Ph / math.sqrt(float(h @ Ph))

    def translated(self, new_center) -> "Ellipsoid":
        return Ellipsoid(self.P, np.asarray(new_center, dtype=float))

    def scaled(self, s: float) -> "Ellipsoid":
        return Ellipsoid(s * s * self.P, s * self.center)


@dataclass(frozen=True)
class Polytope:
    """Half-space set {x : F x <= g}; certified nonempty at construction."""

    F: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if F.shape[0] != g.size:
            raise DomainError("row counts of F and g differ")
        norms = np.linalg.norm(F, axis=1)
        if np.any(norms == 0.0):
            raise DomainError("zero rows in F are not allowed")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "g", g)
        if self.chebyshev()[1] < 0:
            raise DomainError("empty polytope")

    @property
    def dim(self) -> int:
        return self.F.shape[1]

    @property
    def nrows(self) -> int:
        return self.F.shape[0]

    def contains(self, x, tol: float = 1e-9) -> bool:
        return bool(np.all(self.F @ np.asarray(x, dtype=float) <= self.g + tol))

    def slack(self, x) -> float:
        """Smallest margin g_l - F_l x; negative outside."""
        return float(np.min(self.g - self.F @ np.asarray(x, dtype=float)))

    def chebyshev(self):
        """Chebyshev center and radius (radius < 0 certifies emptiness)."""
        norms = np.linalg.norm(self.F, axis=1)
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.F, norms[:, None]])
        res = scipy.optimize.linprog(
            c, A_ub=A_ub, b_ub=self.g, bounds=[(None, None)] * self.dim + [(None, None)],
            method="highs",
        )
        if not res.success:
            return np.zeros(self.dim), -np.inf
        return res.x[:-1], float(res.x[-1])

    def translated(self, offset) -> "Polytope":
        """Polytope in coordinates y = x - offset."""
        return Polytope(self.F, self.g - self.F @ np.asarray(offset, dtype=float))


def project_ellipsoid(E: Ellipsoid, coords=(0, 1)) -> Ellipsoid:
    """Shadow of an ellipsoid on a coordinate plane.

    The projection of {z : z^T P^{-1} z <= 1} onto coordinates (i, j) is the
    ellipse with shape C P C^T, C the coordinate selector.
    """
    i, j = coords
    if i == j:
        raise DomainError("projection coordinates must be distinct")
    if E.dim < 2:
        raise DomainError("need dimension >= 2")
    idx = [i, j]
    return Ellipsoid(E.P[np.ix_(idx, idx)], E.center[idx])


def ellipsoid_in_polytope(E: Ellipsoid, S: Polytope) -> bool:
    """Exact containment test F_l P F_l^T <= g_l^2 for an origin-centered ellipsoid."""
    if E.dim != S.dim:
        raise DomainError("dimension mismatch")
    if np.any(S.g < 0):
        return False  # 0 not in S, so E(P, 0) cannot be contained
    vals = np.einsum("ld,de,le->l", S.F, E.P, S.F)
    return bool(np.all(vals <= S.g**2 * (1.0 + MEMBERSHIP_RTOL) + 1e-30))


# ---------------------------------------------------------------------------
# direction sets and convex hulls
# ---------------------------------------------------------------------------

def sphere_directions(dim: int, count: int | None = None) -> np.ndarray:
    """Deterministic low-discrepancy unit directions (symmetric point cloud)."""
    if count is None:
        count = 64 if dim <= 3 else 512
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if dim == 3:
        # Fibonacci sphere
        k = np.arange(count, dtype=float) + 0.5
        phi = np.arccos(1.0 - 2.0 * k / count)
        theta = np.pi * (1.0 + 5**0.5) * k
        return np.column_stack(
            [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)]
        )
    sob = qmc.Sobol(d=dim, scramble=False)
    raw = sob.random(count // 2 + 1)[1:]  # first Sobol point is the origin
    z = scipy.special.ndtri(np.clip(raw, 1e-12, 1 - 1e-12))
    nz = np.linalg.norm(z, axis=1)
    z = z[nz > 1e-12] / nz[nz > 1e-12, None]
    return np.vstack([z, -z])


@dataclass(frozen=True)
class HullResult:
    """Canonical convex-hull output: extreme points plus simplicial facets."""

    points: np.ndarray
    vertices: np.ndarray          # indices into points, canonically ordered
    facets: tuple                 # tuples of point indices, one simplex per facet
    equations: np.ndarray         # rows [n, -o] with n x <= o outward


def quickhull(points) -> HullResult:
    """Convex hull with deterministic ordering; raises DegenerateHull when flat.

    Vertices are exactly the extreme points, ordered lexicographically by
    coordinates; facets are simplices sorted by their index tuples.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    npts, dim = pts.shape
    if npts < dim + 1:
        raise DegenerateHull(_affine_dim(pts), dim)
    adim = _affine_dim(pts)
    if adim < dim:
        raise DegenerateHull(adim, dim)
    try:
        hull = scipy.spatial.ConvexHull(pts)
    except scipy.spatial.QhullError as exc:  # pragma: no cover - guarded above
        raise DegenerateHull(adim, dim) from exc
    order = np.lexsort(pts[hull.vertices].T[::-1])
    vertices = hull.vertices[order]
    facets = sorted(tuple(sorted(int(i) for i in simplex)) for simplex in hull.simplices)
    return HullResult(points=pts, vertices=vertices, facets=tuple(facets),
                      equations=hull.equations.copy())


def _affine_dim(pts: np.ndarray) -> int:
    centered = pts - pts.mean(axis=0)
    if centered.shape[0] == 0:
        return 0
    sv = np.linalg.svd(centered, compute_uv=False)
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    return int(np.sum(sv > 1e-9 * scale))


@dataclass
class HullOfEllipsoids:
    """Convex hull of same-center ellipsoids, with a sampled vertex cloud.

    The true hull Co(E_1, ..., E_k) is curved; `hull_vertices` is the vertex
    set of the polytope spanned by deterministically sampled boundary points,
    an inner approximation used for facets and transition checks.
    """

    members: list
    boundary_points: np.ndarray = field(default=None)
    hull_vertices: np.ndarray = field(default=None)
    facets: tuple = field(default=None)
    equations: np.ndarray = field(default=None)

    def __post_init__(self):
        dims = {e.dim for e in self.members}
        if len(dims) != 1:
            raise DomainError("members must share a dimension")
        centers = np.array([e.center for e in self.members])
        if np.max(np.abs(centers - centers[0])) > 1e-9:
            raise DomainError("members must share a center")
        if self.boundary_points is None:
            dirs = sphere_directions(self.dim)
            self.boundary_points = np.vstack(
                [e.boundary_points(dirs) for e in self.members]
            )
        if self.hull_vertices is None:
            res = quickhull(self.boundary_points)
            self.hull_vertices = self.boundary_points[res.vertices]
            self.facets = res.facets
            self.equations = res.equations

    @property
    def dim(self) -> int:
        return self.members[0].dim

    @property
    def center(self) -> np.ndarray:
        return self.members[0].center

    def gauge(self, x) -> float:
        """Composite quadratic gauge of the exact (curved) hull."""
        z = np.asarray(x, dtype=float) - self.center
        return composite_gauge([e.P for e in self.members], z)

    def contains(self, x, rtol: float = MEMBERSHIP_RTOL) -> bool:
        return self.gauge(x) <= 1.0 + rtol

    def support_point(self, h) -> np.ndarray:
        """Extreme point of the hull in direction h (lies on a member boundary)."""
        h = np.asarray(h, dtype=float)
        vals = [float(h @ (e.P @ h)) for e in self.members]
        i = int(np.argmax(vals))
        return self.members[i].support_point(h)

    def translated(self, new_center) -> "HullOfEllipsoids":
        delta = np.asarray(new_center, dtype=float) - self.center
        moved = [e.translated(e.center + delta) for e in self.members]
        eqs = self.equations.copy()
        eqs[:, -1] -= eqs[:, :-1] @ delta
        return HullOfEllipsoids(
            members=moved,
            boundary_points=self.boundary_points + delta,
            hull_vertices=self.hull_vertices + delta,
            facets=self.facets,
            equations=eqs,
        )


def composite_gauge(shapes, z) -> float:
    """Gauge of the hull of origin-centered ellipsoids at z.

    The hull Co(E(P_1, 0), ..., E(P_k, 0)) is the unit level set of the
    composite quadratic  min over simplex weights a of z^T (sum a_i P_i)^{-1} z,
    which is convex in the weights.
    """
    z = np.asarray(z, dtype=float)
    k = len(shapes)
    if k == 1:
        return float(z @ np.linalg.solve(shapes[0], z))

    def value(alpha):
        M = sum(a * P for a, P in zip(alpha, shapes))
        return float(z @ np.linalg.solve(M, z))

    if k == 2:
        f = lambda a: value([a, 1.0 - a])
        a = _golden_min(f, 0.0, 1.0, tol=1e-10)
        return min(f(a), f(0.0), f(1.0))

    def fun(w):
        aw = np.abs(w)
        return value(aw / np.sum(aw))

    best = min(value(np.eye(k)[i]) for i in range(k))
    for w0 in [np.ones(k)] + [np.eye(k)[i] + 1e-2 for i in range(k)]:
        res = scipy.optimize.minimize(fun, w0, method="Nelder-Mead",
                                      options={"xatol": 1e-10, "fatol": 1e-13,
                                               "maxiter": 2000})
        best = min(best, float(res.fun))
    return best


def polytope_underapprox(hull: HullOfEllipsoids) -> Polytope:
    """Polyhedral under-approximation: facet half-spaces of the sampled vertex hull."""
    if hull.equations is None:
        raise DegenerateHull(0, hull.dim)
    F = hull.equations[:, :-1]
    g = -hull.equations[:, -1]
    # qhull can emit near-duplicate facet planes; keep unique rows
    rows = np.hstack([F, g[:, None]])
    _, keep = np.unique(np.round(rows, 12), axis=0, return_index=True)
    keep = np.sort(keep)
    return Polytope(F[keep], g[keep])


def _golden_min(f, lo, hi, tol=1e-10, max_iter=200):
    """Golden-section minimizer for a scalar unimodal function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# ellipsoid fusion
# ---------------------------------------------------------------------------

def _fusion_family(E1: Ellipsoid, E2: Ellipsoid, alpha: float):
    """Tight fused ellipsoid at simplex weight (alpha, 1 - alpha).

    With X_i = P_i^{-1}, the nonnegative combination of the member quadratics
    q_i(x) = (x - p_i)^T X_i (x - p_i) - 1 has sublevel set
    {(x - p_o)^T X_o (x - p_o) <= r^2}; the returned shape folds in r^2.
    r^2 < 0 certifies an empty combination (no intersection certificate).
    """
    X1 = np.linalg.inv(E1.P)
    X2 = np.linalg.inv(E2.P)
    p1, p2 = E1.center, E2.center
    Xo = alpha * X1 + (1.0 - alpha) * X2
    b = alpha * (X1 @ p1) + (1.0 - alpha) * (X2 @ p2)
    po = np.linalg.solve(Xo, b)
    r2 = 1.0 - (alpha * (p1 @ X1 @ p1) + (1.0 - alpha) * (p2 @ X2 @ p2)) + b @ po
    return Xo, po, float(r2)


def _fusion_logdet(E1, E2, alpha):
    """log det of the tight fused shape (r^2 * X_o^{-1}); +inf when empty."""
    Xo, _, r2 = _fusion_family(E1, E2, alpha)
    if r2 <= 0:
        return np.inf
    d = E1.dim
    sign, logdet_X = np.linalg.slogdet(Xo)
    return d * math.log(r2) - logdet_X


def fuse_ellipsoids_search(E1: Ellipsoid, E2: Ellipsoid, grid: int = 129):
    """Reference route: 1-D search over the simplex weight.

    Minimizes log det of the fused shape (tightest certificate) with a grid
    scan plus golden-section refinement.  Raises NoOverlap when every weight
    yields an empty combination.
    """
    alphas = np.linspace(0.0, 1.0, grid)
    vals = np.array([_fusion_logdet(E1, E2, a) for a in alphas])
    r2s = np.array([_fusion_family(E1, E2, a)[2] for a in alphas])
    if np.min(r2s) < 0:
        raise NoOverlap("ellipsoids do not intersect")
    j = int(np.argmin(vals))
    lo = alphas[max(j - 1, 0)]
    hi = alphas[min(j + 1, grid - 1)]
    a = _golden_min(lambda t: _fusion_logdet(E1, E2, t), lo, hi, tol=1e-12)
    candidates = [a, alphas[j], 0.0, 1.0]
    a_best = min(candidates, key=lambda t: _fusion_logdet(E1, E2, t))
    Xo, po, r2 = _fusion_family(E1, E2, a_best)
    if r2 <= 0:
        raise NoOverlap("ellipsoids do not intersect")
    Eo = Ellipsoid(r2 * np.linalg.inv(Xo), po)
    return Eo, (a_best, 1.0 - a_best)


def fuse_ellipsoids(E1: Ellipsoid, E2: Ellipsoid, solver=None):
    """Fusion ellipsoid sandwiched between intersection and union.

    Solves, over multipliers rho >= 0, the log det program whose constraint is
    the 3x3 block LMI coupling the combined quadratic's constant, linear, and
    quadratic parts; at the optimum the LMI is active and the recovered
    ellipsoid  P_o^{-1} = sum_i rho_i P_i^{-1},
    p_o = P_o (sum_i rho_i P_i^{-1} p_i)  is the tightest member of the fusion
    family: it encloses E1 ∩ E2 and stays inside E1 ∪ E2.

    The primary route runs through the SDP backend; `fuse_ellipsoids_search`
    is the independent oracle.  Raises NoOverlap when the ellipsoids do not
    intersect (the program is then unbounded / has no certificate).
    """
    if E1.dim != 2 or E2.dim != 2:
        raise DomainError("fusion operates on 2-D ellipsoids")
    # cheap exact pre-check: emptiness of the intersection is certified by a
    # negative tight level somewhere on the simplex (S-procedure, 2 quadrics)
    r2_min = min(_fusion_family(E1, E2, a)[2] for a in np.linspace(0, 1, 65))
    a_chk = _golden_min(lambda t: _fusion_family(E1, E2, t)[2], 0.0, 1.0, tol=1e-12)
    r2_min = min(r2_min, _fusion_family(E1, E2, a_chk)[2])
    if r2_min < 0:
        raise NoOverlap("ellipsoids do not intersect")

    from .backend import SdpBackend

    backend = solver if solver is not None else SdpBackend()
    rho, Xo = backend.solve_fusion(E1, E2)
    if rho is None:
        raise NoOverlap("fusion program returned no certificate")
    b = rho[0] * np.linalg.solve(E1.P, E1.center) + rho[1] * np.linalg.solve(E2.P, E2.center)
    po = np.linalg.solve(Xo, b)
    Eo = Ellipsoid(np.linalg.inv(Xo), po)
    # the LMI is active at the optimum up to solver tolerance; re-tighten the
    # level exactly so the sandwich certificate is numerically clean
    s = rho[0] + rho[1]
    if s <= 0:
        raise NoOverlap("degenerate multipliers")
    alpha = float(rho[0] / s)
    Xo_t, po_t, r2_t = _fusion_family(E1, E2, alpha)
    if r2_t <= 0:
        raise NoOverlap("ellipsoids do not intersect")
    Eo = Ellipsoid(r2_t * np.linalg.inv(Xo_t), po_t)
    return Eo, (float(rho[0]), float(rho[1]))
