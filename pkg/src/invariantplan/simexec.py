"""Plant models, closed-loop plan execution, and the per-step safety monitor.

Execution walks the planned node sequence.  Each leg regulates toward the
target node's steady state using the gains of the node recorded as the leg
controller (the parent's gains drive to an intermediate hand-off point, the
child's gains onward), integrates the virtual input u_{k+1} = u_k + Ts v_k,
and advances when the position enters the r_f-ball of the target.  The
monitor records the active region's gauge and the polytope slack at every
step and flags any violation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PlantFault
from .lifted import Dictionary, error_coordinates

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Plant:
    """Deterministic single-step map with its exact dictionary, when known."""

    name: str
    n: int
    m: int
    Ts: float
    step_fn: object
    dictionary: Dictionary
    coefficients: object = None   # () -> (Abar, Ahat) with x+ = Abar xi + Ahat S(xi)
    angle_index: int | None = None

    def step(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.asarray(self.step_fn(x, u, self.Ts), dtype=float)
        return out

    def lifted_coefficients(self):
        if self.coefficients is None:
            return None
        return self.coefficients()


def simulate_step(plant: Plant, x, u) -> np.ndarray:
    """One plant step; raises PlantFault on a non-finite result."""
    out = plant.step(x, u)
    if not np.all(np.isfinite(out)):
        raise PlantFault(f"plant {plant.name} produced a non-finite state")
    return out


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    r = math.fmod(theta, 2.0 * math.pi)
    if r > math.pi:
        r -= 2.0 * math.pi
    elif r <= -math.pi:
        r += 2.0 * math.pi
    return r


def unicycle(Ts: float = 0.1) -> Plant:
    """Forward-Euler differential-drive kinematics (x, y, theta; inputs v, omega)."""

    def step(x, u, dt):
        v, om = u
        th = x[2]
        return np.array([x[0] + dt * v * math.cos(th),
                         x[1] + dt * v * math.sin(th),
                         x[2] + dt * om])

    def basis(xi):
        return np.array([xi[3] * math.cos(xi[2]), xi[3] * math.sin(xi[2])])

    def coeffs():
        Abar = np.zeros((3, 5))
        Abar[0, 0] = 1.0
        Abar[1, 1] = 1.0
        Abar[2, 2] = 1.0
        Abar[2, 4] = Ts
        Ahat = np.array([[Ts, 0.0], [0.0, Ts], [0.0, 0.0]])
        return Abar, Ahat

    dictionary = Dictionary(basis_labels=("v*cos(theta)", "v*sin(theta)"), eval=basis)
    return Plant(name="unicycle", n=3, m=2, Ts=Ts, step_fn=step,
                 dictionary=dictionary, coefficients=coeffs, angle_index=2)


FIXTURE_A = np.array([[0.7, 0.1, 0.05],
                      [0.0, 0.8, 0.1],
                      [0.1, 0.0, 0.6]])
FIXTURE_B = np.array([[0.5, 0.1],
                      [0.1, 0.5],
                      [0.2, 0.2]])


def three_state_fixture(Ts: float = 1.0) -> Plant:
    """Three-state benchmark x+ = A x + B u + [sin x1; x2^2 - 0.5; exp(-x3) - 1]."""

    def f(x):
        return np.array([math.sin(x[0]), x[1] ** 2 - 0.5, math.exp(-x[2]) - 1.0])

    def step(x, u, dt):
        return FIXTURE_A @ x + FIXTURE_B @ u + f(x)

    def basis(xi):
        return np.array([math.sin(xi[0]), xi[1] ** 2 - 0.5, math.exp(-xi[2]) - 1.0])

    def coeffs():
        return np.hstack([FIXTURE_A, FIXTURE_B]), np.eye(3)

    dictionary = Dictionary(
        basis_labels=("sin(x1)", "x2^2-0.5", "exp(-x3)-1"), eval=basis)
    return Plant(name="three-state-fixture", n=3, m=2, Ts=Ts, step_fn=step,
                 dictionary=dictionary, coefficients=coeffs)


def linear_chain(Ts: float = 0.1) -> Plant:
    """Two decoupled scalar chains x_i+ = x_i + Ts u_i (empty dictionary)."""

    def step(x, u, dt):
        return x + dt * u

    def coeffs():
        return np.hstack([np.eye(2), Ts * np.eye(2)]), None

    from .lifted import EMPTY_DICTIONARY

    return Plant(name="linear-chain", n=2, m=2, Ts=Ts, step_fn=step,
                 dictionary=EMPTY_DICTIONARY, coefficients=coeffs)


BUILTIN_PLANTS = {
    "unicycle": unicycle,
    "three-state-fixture": three_state_fixture,
    "linear-chain": linear_chain,
}


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

@dataclass
class ExecConfig:
    r_f: float = 0.4
    step_cap: int = 20_000
    gauge_tol: float = 1e-6
    reset_integrator: bool = True   # zero eta at controller hand-offs
    algorithm: str = "auto"         # auto | ellipsoid | hull


@dataclass
class TraceStep:
    k: int
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    node: int
    selector: str
    gauge: float              # covering gauge (active region, else predecessor)
    slack: float
    gauge_active: float = float("nan")
    prev_node: int | None = None


@dataclass
class ExecutionTrace:
    steps: list = field(default_factory=list)
    outcome: str = "stalled"        # reached | safety_violation | stalled
    violation_step: int | None = None
    final_distance_to_goal: float = float("nan")

    def as_rows(self):
        rows = []
        for s in self.steps:
            rows.append([s.k, *map(float, s.x), *map(float, s.u), *map(float, s.v),
                         s.node, float(s.gauge), float(s.slack)])
        return rows


def _delta_s(dictionary: Dictionary, xi, xi_star):
    if dictionary.size == 0:
        return np.zeros(0)
    return dictionary(xi) - dictionary(xi_star)


def coverage_gauge(plant: Plant, graph, node_index: int, prev_index, x, u, eta):
    """Covering gauge of the raw state: active region first, predecessor next.

    During a hand-off the state legitimately sits in the predecessor's
    certified set until the new leg's contraction captures it, so safety is
    membership in either region (the invariance argument covers the union
    along the path).  The predecessor check uses a zero integrator, its
    value after the reset at the switch.
    """
    nodes = graph.nodes

    def region_gauge(idx, eta_val):
        node = nodes[idx]
        ctrl = nodes[node.leg_controller if node.leg_controller is not None else idx]
        ss = node.ss
        xi = np.concatenate([x, u])
        if plant.angle_index is not None:
            ai = plant.angle_index
            xi = xi.copy()
            xi[ai] = ss.xi_star[ai] + wrap_angle(xi[ai] - ss.xi_star[ai])
        zeta = error_coordinates((xi, eta_val), ss)
        return ctrl.region.gauge(zeta), ctrl.region.polytope.slack(zeta), zeta

    g_act, s_act, zeta = region_gauge(node_index, eta)
    cover, slack = g_act, s_act
    if (g_act > 1.0 or s_act < 0.0) and prev_index is not None:
        g_prev, s_prev, _ = region_gauge(prev_index, np.zeros(2))
        if (g_prev <= 1.0 and s_prev >= 0.0) or (g_prev < cover):
            cover, slack = g_prev, s_prev
    return cover, slack, g_act, zeta


def execute_plan(plant: Plant, graph, path, exec_cfg: ExecConfig) -> ExecutionTrace:
    """Closed-loop execution of an extracted path through the plan graph."""
    if not path:
        raise ValueError("empty path")
    nodes = graph.nodes
    trace = ExecutionTrace()
    start = nodes[path[0]]
    x = start.ss.xi_star[: plant.n].copy()
    u = start.ss.xi_star[plant.n :].copy()
    eta = start.ss.eta_star.copy()
    goal = np.asarray(graph.goal, dtype=float) if graph.goal is not None else \
        nodes[path[-1]].waypoint

    if len(path) == 1:
        trace.outcome = "reached"
        trace.final_distance_to_goal = float(np.linalg.norm(x[:2] - goal))
        return trace

    k = 0
    leg = 1
    while k < exec_cfg.step_cap:
        target = nodes[path[leg]]
        ctrl_node = nodes[target.leg_controller if target.leg_controller is not None
                          else path[leg]]
        region = ctrl_node.region
        ss = target.ss
        xi = np.concatenate([x, u])
        if plant.angle_index is not None:
            ai = plant.angle_index
            xi = xi.copy()
            xi[ai] = ss.xi_star[ai] + wrap_angle(xi[ai] - ss.xi_star[ai])
        zeta = error_coordinates((xi, eta), ss)
        prev_index = path[leg - 1] if leg >= 1 else None
        gauge, slack, gauge_active, _ = coverage_gauge(
            plant, graph, path[leg], prev_index, x, u, eta)
        if gauge > 1.0 + exec_cfg.gauge_tol or slack < -exec_cfg.gauge_tol:
            trace.steps.append(TraceStep(k=k, x=x.copy(), u=u.copy(),
                                         v=np.zeros(plant.m), node=path[leg],
                                         selector="outside", gauge=float(gauge),
                                         slack=float(slack),
                                         gauge_active=float(gauge_active),
                                         prev_node=prev_index))
            trace.outcome = "safety_violation"
            trace.violation_step = k
            trace.final_distance_to_goal = float(np.linalg.norm(x[:2] - goal))
            return trace
        dS = _delta_s(plant.dictionary, xi, ss.xi_star)
        if exec_cfg.algorithm == "ellipsoid" or (
                exec_cfg.algorithm == "auto" and region.kind == "single"):
            v = np.atleast_2d(region.controller.gains_linear[0]) @ zeta
            if region.controller.gain_nl.shape[1]:
                v = v + region.controller.gain_nl @ dS
            selector = "member0"
        else:
            from .errors import OutsideSafeRegion
            from .partition import evaluate_control, locate_partition

            try:
                sel = locate_partition(region.controller, zeta, rtol=2 * exec_cfg.gauge_tol)
                selector = f"{sel[0]}{sel[1]}"
                v = evaluate_control(region.controller, zeta, dS,
                                     rtol=2 * exec_cfg.gauge_tol)
            except OutsideSafeRegion:
                # covered by the predecessor region during hand-off; apply the
                # nearest-member gain to pull the state into the active set
                vals = [zeta @ np.linalg.solve(E.P, zeta)
                        for E in region.controller.members]
                j = int(np.argmin(vals))
                selector = f"handoff{j}"
                v = np.atleast_2d(region.controller.gains_linear[j]) @ zeta
                if region.controller.gain_nl.shape[1]:
                    v = v + region.controller.gain_nl @ dS
        v = np.asarray(v, dtype=float).ravel()

        trace.steps.append(TraceStep(k=k, x=x.copy(), u=u.copy(), v=v.copy(),
                                     node=path[leg], selector=selector,
                                     gauge=float(gauge), slack=float(slack),
                                     gauge_active=float(gauge_active),
                                     prev_node=prev_index))

        x_next = simulate_step(plant, x, u)
        u = u + plant.Ts * v
        eta = eta + plant.Ts * (x[:2] - ss.waypoint)
        x = x_next
        if plant.angle_index is not None:
            x[plant.angle_index] = wrap_angle(x[plant.angle_index])
        k += 1

        final_leg = leg == len(path) - 1
        arrival_point = goal if final_leg else target.waypoint
        if np.linalg.norm(x[:2] - arrival_point) < exec_cfg.r_f:
            if final_leg:
                trace.outcome = "reached"
                trace.final_distance_to_goal = float(np.linalg.norm(x[:2] - goal))
                return trace
            leg += 1
            if exec_cfg.reset_integrator:
                eta = np.zeros(2)
    trace.outcome = "stalled"
    trace.final_distance_to_goal = float(np.linalg.norm(x[:2] - goal))
    return trace


def audit_trace(trace: ExecutionTrace, graph, env=None, plant: Plant | None = None) -> dict:
    """Recompute membership of every recorded state in its covering region.

    Reports the worst covering gauge and slack, obstacle penetrations, and
    the empirical per-node one-step gauge contraction ratios.  When a plant
    is supplied, coverage is recomputed from the raw states rather than
    trusting the recorded values.
    """
    worst_gauge = -np.inf
    worst_slack = np.inf
    obstacle_steps = 0
    recomputed_worst = -np.inf
    ratios = {}
    prev = None
    eta = np.zeros(2)
    for s in trace.steps:
        worst_gauge = max(worst_gauge, s.gauge)
        worst_slack = min(worst_slack, s.slack)
        if env is not None and env.in_obstacle(s.x[:2], margin=-1e-9):
            obstacle_steps += 1
        if plant is not None:
            node = graph.nodes[s.node]
            if prev is not None and prev.node != s.node:
                eta = np.zeros(2)
            g, sl, _, _ = coverage_gauge(plant, graph, s.node, s.prev_node,
                                         s.x, s.u, eta)
            recomputed_worst = max(recomputed_worst, g)
            eta = eta + plant.Ts * (s.x[:2] - node.ss.waypoint)
        if prev is not None and prev.node == s.node and prev.gauge > 1e-8:
            ratios.setdefault(s.node, []).append(s.gauge / prev.gauge)
        prev = s
    med = {node: float(np.median(r)) for node, r in ratios.items() if r}
    return {
        "worst_gauge": float(worst_gauge) if trace.steps else 0.0,
        "worst_slack": float(worst_slack) if trace.steps else 0.0,
        "recomputed_worst_gauge": (float(recomputed_worst)
                                   if plant is not None and trace.steps else None),
        "obstacle_steps": obstacle_steps,
        "outcome": trace.outcome,
        "violation_step": trace.violation_step,
        "median_contraction_per_node": med,
        "clean": trace.outcome == "reached" and obstacle_steps == 0
                 and (worst_gauge <= 1.0 + 1e-6),
    }
