"""Hull partitioning, simplex gain interpolation, and the piecewise law.

Exact-partition mode triangulates the sampled hull boundary into facet
simplices; each facet F with vertex matrix V = [v_1 ... v_d] gets the
interpolated linear gain K_F = [K_{own(1)} v_1, ..., K_{own(d)} v_d] V^{-1},
owner = member ellipsoid whose quadratic form at the vertex is closest to 1.
At a vertex the interpolated value reproduces the owner's gain exactly, and
shared vertices make the piecewise-affine law continuous across facets.  The
nonlinear gain is shared by all members (see synthesis), so the full control
law stays continuous.

Facet enumeration blows up combinatorially with dimension, so exact mode is
reserved for d <= 4; higher dimensions default to nearest-ellipsoid gain
selection, validated empirically by the execution monitor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, OutsideSafeRegion
from .geometry import Ellipsoid, HullOfEllipsoids, Polytope, composite_gauge

log = logging.getLogger(__name__)

EXACT_MODE_MAX_DIM = 4
CONDITION_CAP = 1e8


@dataclass
class Facet:
    vertex_ids: tuple
    V: np.ndarray            # d x d, vertices as columns
    V_inv: np.ndarray
    gain: np.ndarray         # interpolated linear gain, m x d


@dataclass
class PartitionedController:
    members: list
    gains_linear: list       # K_{l,i}, m x d
    gain_nl: np.ndarray      # shared nonlinear gain, m x n_S
    mode: str                # "exact-partition" | "nearest-ellipsoid"
    hull: HullOfEllipsoids | None = None
    facets: list = field(default_factory=list)
    vertex_owner: dict = field(default_factory=dict)
    excluded_facets: int = 0

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def gauge(self, zeta) -> float:
        if len(self.members) == 1:
            return self.members[0].gauge(zeta)
        return composite_gauge([e.P for e in self.members], np.asarray(zeta, dtype=float))


def build_partition(ellipsoids, gains_linear, gain_nl=None, mode=None,
                    condition_cap: float = CONDITION_CAP) -> PartitionedController:
    """Assemble the piecewise controller for a hull of ellipsoids.

    mode defaults to exact-partition for d <= 4 and nearest-ellipsoid above.
    Ill-conditioned facets (cond(V) > cap) are excluded and logged.
    """
    members = list(ellipsoids)
    d = members[0].dim
    if any(e.dim != d for e in members):
        raise DomainError("ellipsoid dimensions differ")
    if np.max(np.abs(np.array([e.center for e in members]))) > 1e-9:
        raise DomainError("partition controller expects origin-centered members")
    if len(gains_linear) != len(members):
        raise DomainError("one linear gain per ellipsoid required")
    m = np.atleast_2d(gains_linear[0]).shape[0]
    gain_nl = (np.zeros((m, 0)) if gain_nl is None
               else np.atleast_2d(np.asarray(gain_nl, dtype=float)))
    if mode is None:
        mode = "exact-partition" if d <= EXACT_MODE_MAX_DIM else "nearest-ellipsoid"
    if len(members) == 1:
        return PartitionedController(members=members, gains_linear=list(gains_linear),
                                     gain_nl=gain_nl, mode=mode, hull=None)

    if mode != "exact-partition":
        # the composite gauge needs no facet structure; skip hull construction
        return PartitionedController(members=members, gains_linear=list(gains_linear),
                                     gain_nl=gain_nl, mode=mode, hull=None)

    hull = HullOfEllipsoids(members)
    ctrl = PartitionedController(members=members, gains_linear=list(gains_linear),
                                 gain_nl=gain_nl, mode=mode, hull=hull)

    pts = hull.boundary_points
    owner = {}
    for fid in set(i for facet in hull.facets for i in facet):
        v = pts[fid]
        devs = [abs(e.gauge(v) - 1.0) for e in members]
        owner[fid] = int(np.argmin(devs))
    ctrl.vertex_owner = owner

    excluded = 0
    for facet in hull.facets:
        if len(facet) != d:
            excluded += 1
            continue
        V = np.column_stack([pts[i] for i in facet])
        cond = np.linalg.cond(V)
        if not np.isfinite(cond) or cond > condition_cap:
            excluded += 1
            log.warning("facet %s excluded: condition number %.3g", facet, cond)
            continue
        V_inv = np.linalg.inv(V)
        K_mat = np.column_stack([
            np.atleast_2d(gains_linear[owner[i]]) @ pts[i] for i in facet
        ])
        ctrl.facets.append(Facet(vertex_ids=facet, V=V, V_inv=V_inv,
                                 gain=K_mat @ V_inv))
    ctrl.excluded_facets = excluded
    return ctrl


def locate_partition(ctrl: PartitionedController, zeta, rtol: float = 1e-6):
    """Facet id (exact mode) or member id (nearest mode) containing zeta.

    Exact mode scans facet cones in deterministic order and returns the first
    whose cone coordinates V^{-1} zeta are all >= -1e-9; nearest mode returns
    argmin_i zeta^T P_i^{-1} zeta with ties to the lowest index.
    """
    zeta = np.asarray(zeta, dtype=float)
    if len(ctrl.members) == 1:
        if ctrl.members[0].gauge(zeta) > 1.0 + rtol:
            raise OutsideSafeRegion("state outside the safe ellipsoid")
        return ("member", 0)
    if ctrl.gauge(zeta) > 1.0 + rtol:
        raise OutsideSafeRegion("state outside the safe hull")
    if ctrl.mode == "nearest-ellipsoid":
        vals = [zeta @ np.linalg.solve(e.P, zeta) for e in ctrl.members]
        return ("member", int(np.argmin(vals)))
    for fid, facet in enumerate(ctrl.facets):
        c = facet.V_inv @ zeta
        if np.all(c >= -1e-9):
            return ("facet", fid)
    # a point in an excluded facet's cone: fall back to the nearest member
    vals = [zeta @ np.linalg.solve(e.P, zeta) for e in ctrl.members]
    log.warning("no facet cone found (excluded facet?); nearest-member fallback")
    return ("member", int(np.argmin(vals)))


def evaluate_control(ctrl: PartitionedController, zeta, delta_S=None,
                     rtol: float = 1e-6) -> np.ndarray:
    """Piecewise feedback v = K_sel [zeta; S(xi) - S(xi*)]."""
    zeta = np.asarray(zeta, dtype=float)
    kind, idx = locate_partition(ctrl, zeta, rtol=rtol)
    if kind == "member":
        K_lin = np.atleast_2d(ctrl.gains_linear[idx])
    else:
        K_lin = ctrl.facets[idx].gain
    v = K_lin @ zeta
    if delta_S is not None and ctrl.gain_nl.shape[1]:
        v = v + ctrl.gain_nl @ np.asarray(delta_S, dtype=float)
    return v


@dataclass
class SafeRegion:
    """Invariant region (single ellipsoid or hull) with its controller.

    Shapes and gains live in origin-centered error coordinates; the planner
    translates projections to waypoints when certifying transitions.
    """

    kind: str                     # "single" | "hull"
    ellipsoids: list
    controller: PartitionedController
    gamma: list
    vartheta: list
    polytope: Polytope            # exact lifted constraints at this waypoint
    projected: object = None      # 2-D Ellipsoid or HullOfEllipsoids, centered 0
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.projected is None:
            from .geometry import project_ellipsoid

            if self.kind == "single":
                self.projected = project_ellipsoid(self.ellipsoids[0], (0, 1))
            else:
                proj = [project_ellipsoid(e, (0, 1)) for e in self.ellipsoids]
                self.projected = HullOfEllipsoids(proj)

    def gauge(self, zeta) -> float:
        return self.controller.gauge(zeta)

    def control(self, zeta, delta_S=None) -> np.ndarray:
        return evaluate_control(self.controller, zeta, delta_S)


def region_from_result(result, polytope: Polytope, mode=None) -> SafeRegion:
    """Wrap a synthesis result into an executable safe region."""
    kind = "single" if result.n_e == 1 else "hull"
    ctrl = build_partition(result.ellipsoids, result.gains_linear,
                           result.gain_nl, mode=mode)
    return SafeRegion(kind=kind, ellipsoids=result.ellipsoids, controller=ctrl,
                      gamma=result.gamma, vartheta=result.vartheta,
                      polytope=polytope, residuals=result.residuals)
