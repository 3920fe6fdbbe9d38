"""Lifted data matrices assembled from excitation experiments.

The plant is excited through the input-increment channel u_{k+1} = u_k + Ts v_k
while the integral state follows eta_{k+1} = eta_k + Ts x_pos,k (zero
reference during collection).  One experiment of length N yields

    V0  (m x N)        columns v_k
    Z0  (n_Z x N)      columns [xi_k; eta_k; S(xi_k)]
    Xi1 ((n+m+2) x N)  columns [xi_{k+1}; eta_k + Ts x_pos,k]

with xi = [x; u] and n_Z = n + m + 2 + n_S.  For any plant rendered exact by
the dictionary, Xi1 = A_aug Z0 + B_aug V0 holds to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import DomainError, PlantFault, RankDeficiencyRisk, SteadyStateNotFound


@dataclass(frozen=True)
class Dictionary:
    """Named scalar basis functions of the stacked state-input vector xi."""

    basis_labels: tuple
    eval: object = None  # callable xi -> ndarray (n_S,), deterministic

    @property
    def size(self) -> int:
        return len(self.basis_labels)

    def __call__(self, xi) -> np.ndarray:
        if self.size == 0:
            return np.zeros(0)
        return np.asarray(self.eval(np.asarray(xi, dtype=float)), dtype=float)


EMPTY_DICTIONARY = Dictionary(basis_labels=())


@dataclass(frozen=True)
class Sample:
    xi: np.ndarray
    eta: np.ndarray
    v: np.ndarray
    xi_next: np.ndarray
    x_pos_next: np.ndarray


@dataclass(frozen=True)
class LiftedDataset:
    n: int
    m: int
    Ts: float
    dictionary: Dictionary
    samples: tuple
    V0: np.ndarray
    Z0: np.ndarray
    Xi1: np.ndarray
    seed: int | None = None
    noise_std: float = 0.0

    def __post_init__(self):
        for mat in (self.V0, self.Z0, self.Xi1):
            mat.setflags(write=False)
        N = self.V0.shape[1]
        if self.Z0.shape[1] != N or self.Xi1.shape[1] != N:
            raise DomainError("column counts of V0, Z0, Xi1 differ")

    @property
    def N(self) -> int:
        return self.V0.shape[1]

    @property
    def n_aug(self) -> int:
        """Dimension of the augmented error state zeta = [xi; eta]."""
        return self.n + self.m + 2

    @property
    def n_Z(self) -> int:
        return self.n_aug + self.dictionary.size


def assemble_dataset(n, m, Ts, dictionary, xi_seq, eta_seq, v_seq,
                     seed=None, noise_std=0.0) -> LiftedDataset:
    """Build the data matrices from an (N+1)-state, N-input trajectory."""
    xi_seq = np.asarray(xi_seq, dtype=float)
    eta_seq = np.asarray(eta_seq, dtype=float)
    v_seq = np.atleast_2d(np.asarray(v_seq, dtype=float))
    N = v_seq.shape[0]
    if xi_seq.shape[0] != N + 1 or eta_seq.shape[0] != N + 1:
        raise DomainError("need N+1 states for N inputs")
    S = np.array([dictionary(xi_seq[k]) for k in range(N)]).reshape(N, dictionary.size)
    V0 = v_seq.T.copy()
    Z0 = np.vstack([xi_seq[:N].T, eta_seq[:N].T, S.T])
    x_pos = xi_seq[:N, :2]
    Xi1 = np.vstack([xi_seq[1:].T, (eta_seq[:N] + Ts * x_pos).T])
    samples = tuple(
        Sample(xi=xi_seq[k].copy(), eta=eta_seq[k].copy(), v=v_seq[k].copy(),
               xi_next=xi_seq[k + 1].copy(), x_pos_next=xi_seq[k + 1, :2].copy())
        for k in range(N)
    )
    return LiftedDataset(n=n, m=m, Ts=Ts, dictionary=dictionary, samples=samples,
                         V0=V0, Z0=Z0, Xi1=Xi1, seed=seed, noise_std=noise_std)


@dataclass
class ExcitationSpec:
    """Seeded excitation: i.i.d. uniform v in a box, plus an optional chirp."""

    N: int
    v_low: np.ndarray
    v_high: np.ndarray
    x0: np.ndarray
    u0: np.ndarray
    chirp_amplitude: float = 0.0
    chirp_rate: float = 0.5


def collect_data(plant, excitation: ExcitationSpec, noise_std: float = 0.0,
                 seed: int = 0) -> LiftedDataset:
    """Run one excitation experiment and assemble the lifted data matrices.

    Noise is measurement noise on the recorded states only; the true
    trajectory and the applied inputs are exact.  The same measurement is
    reused where a state appears both as xi_k and as the previous sample's
    xi_{k+1}.
    """
    n, m = plant.n, plant.m
    dictionary = plant.dictionary
    n_Z = n + m + 2 + dictionary.size
    if excitation.N < n_Z + 1:
        raise RankDeficiencyRisk(
            f"N = {excitation.N} < n_Z + 1 = {n_Z + 1}: rank condition cannot hold")
    rng = np.random.default_rng(seed)
    N = excitation.N
    Ts = plant.Ts

    v_low = np.broadcast_to(np.asarray(excitation.v_low, dtype=float), (m,))
    v_high = np.broadcast_to(np.asarray(excitation.v_high, dtype=float), (m,))
    v_seq = rng.uniform(v_low, v_high, size=(N, m))
    if excitation.chirp_amplitude:
        k = np.arange(N)
        phase = excitation.chirp_rate * k * k * Ts * Ts
        v_seq = v_seq + excitation.chirp_amplitude * np.sin(phase)[:, None]

    x = np.asarray(excitation.x0, dtype=float).copy()
    u = np.asarray(excitation.u0, dtype=float).copy()
    x_true = [x.copy()]
    u_seq = [u.copy()]
    for k in range(N):
        x = plant.step(x, u)
        if not np.all(np.isfinite(x)):
            raise PlantFault(f"non-finite plant output at step {k}")
        u = u + Ts * v_seq[k]
        x_true.append(x.copy())
        u_seq.append(u.copy())
    x_true = np.array(x_true)
    u_seq = np.array(u_seq)

    noise = rng.normal(0.0, noise_std, size=x_true.shape) if noise_std > 0 else 0.0
    x_meas = x_true + noise
    xi_seq = np.hstack([x_meas, u_seq])
    eta_seq = np.zeros((N + 1, 2))
    for k in range(N):
        eta_seq[k + 1] = eta_seq[k] + Ts * x_meas[k, :2]

    return assemble_dataset(n, m, Ts, dictionary, xi_seq, eta_seq, v_seq,
                            seed=seed, noise_std=noise_std)


def check_rank(ds: LiftedDataset) -> dict:
    """Numerical row-rank report for Z0 (Assumption: full row rank)."""
    sv = np.linalg.svd(ds.Z0, compute_uv=False)
    smallest = float(sv[ds.n_Z - 1]) if sv.size >= ds.n_Z else 0.0
    full = ds.Z0.shape[1] >= ds.n_Z and smallest > 1e-8 * float(sv[0])
    return {"full_rank": bool(full), "smallest_singular_value": smallest}


def augmented_coefficients(Abar, Ahat, n, m, Ts):
    """Augmented system matrices (A_aug, B_aug) for x+ = Abar xi + Ahat S(xi).

    Row blocks of A_aug over the lifted vector [xi; eta; S(xi)]:
        x:   [Abar      0    Ahat]
        u:   [[0 I_m]   0    0   ]
        eta: [[Ts C 0]  I_2  0   ]
    with C selecting the first two states; B_aug = [0; Ts I_m; 0].
    """
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    nS = 0 if Ahat is None else np.atleast_2d(Ahat).shape[1]
    Ahat = np.zeros((n, nS)) if Ahat is None else np.atleast_2d(np.asarray(Ahat, dtype=float))
    d = n + m + 2
    A_aug = np.zeros((d, d + nS))
    A_aug[:n, : n + m] = Abar
    A_aug[:n, d:] = Ahat
    A_aug[n : n + m, n : n + m] = np.eye(m)
    A_aug[n + m :, :2] = Ts * np.eye(2)
    A_aug[n + m :, n + m : n + m + 2] = np.eye(2)
    B_aug = np.zeros((d, m))
    B_aug[n : n + m] = Ts * np.eye(m)
    return A_aug, B_aug


@dataclass(frozen=True)
class SteadyState:
    xi_star: np.ndarray
    eta_star: np.ndarray
    waypoint: np.ndarray


def estimate_lifted_map(ds: LiftedDataset) -> np.ndarray:
    """Least-squares estimate of the x-row coefficients of the lifted map.

    Returns A_est with x_{k+1} ~= A_est [xi; S(xi)]; exact on noiseless data
    from a plant the dictionary represents exactly.
    """
    rows = np.vstack([ds.Z0[: ds.n + ds.m], ds.Z0[ds.n_aug:]])
    X1 = ds.Xi1[: ds.n]
    sol, *_ = np.linalg.lstsq(rows.T, X1.T, rcond=None)
    return sol.T


def solve_steady_state(waypoint, provider="rest", plant_hints=None) -> SteadyState:
    """Steady-state pair (xi*, eta*) centering the error coordinates.

    Providers:
      rest        positions at the waypoint, remaining states at configured
                  rest values, u* = 0 (exact whenever zero input freezes the
                  plant, as for the unicycle).
      fixed_point Newton iteration on the data-estimated lifted map for the
                  remaining states and inputs.
      table       user-supplied lookup keyed by the rounded waypoint.
    """
    hints = dict(plant_hints or {})
    wp = np.asarray(waypoint, dtype=float)
    if provider == "rest":
        n, m = hints["n"], hints["m"]
        rest = np.asarray(hints.get("rest_state", np.zeros(n - 2)), dtype=float)
        xi = np.concatenate([wp, rest, np.zeros(m)])
        return SteadyState(xi_star=xi, eta_star=np.zeros(2), waypoint=wp)
    if provider == "fixed_point":
        ds = hints["dataset"]
        n, m = ds.n, ds.m
        A_est = hints.get("lifted_map")
        if A_est is None:
            A_est = estimate_lifted_map(ds)
        dictionary = ds.dictionary

        def residual(z):
            x = np.concatenate([wp, z[: n - 2]])
            u = z[n - 2 :]
            xi = np.concatenate([x, u])
            lift = np.concatenate([xi, dictionary(xi)])
            return x - A_est @ lift

        z0 = np.asarray(hints.get("initial_guess", np.zeros(n - 2 + m)), dtype=float)
        sol = scipy.optimize.root(residual, z0, method="hybr", tol=1e-12)
        if not sol.success or not np.all(np.isfinite(sol.x)):
            raise SteadyStateNotFound(f"fixed-point iteration failed: {sol.message}")
        x = np.concatenate([wp, sol.x[: n - 2]])
        u = sol.x[n - 2 :]
        return SteadyState(xi_star=np.concatenate([x, u]), eta_star=np.zeros(2),
                           waypoint=wp)
    if provider == "table":
        table = hints["table"]
        key = tuple(np.round(wp, 9))
        if key not in table:
            raise SteadyStateNotFound(f"no table entry for waypoint {wp}")
        xi, eta = table[key]
        return SteadyState(xi_star=np.asarray(xi, dtype=float),
                           eta_star=np.asarray(eta, dtype=float), waypoint=wp)
    raise DomainError(f"unknown steady-state provider {provider!r}")


def error_coordinates(state, ss: SteadyState) -> np.ndarray:
    """zeta_e = [xi - xi*; eta - eta*]."""
    xi, eta = state
    return np.concatenate([np.asarray(xi, dtype=float) - ss.xi_star,
                           np.asarray(eta, dtype=float) - ss.eta_star])


# ---------------------------------------------------------------------------
# serialization: one self-describing columnar text file, bit-exact round-trip
# ---------------------------------------------------------------------------

_FMT_VERSION = "invariantplan-dataset v1"


def write_dataset(ds: LiftedDataset, path):
    cols = (f"xi({ds.n + ds.m}) eta(2) v({ds.m}) S({ds.dictionary.size}) "
            f"xi_next({ds.n + ds.m}) x_pos_next(2)")
    lines = [
        _FMT_VERSION,
        f"n={ds.n} m={ds.m} Ts={ds.Ts!r} n_S={ds.dictionary.size} N={ds.N} "
        f"seed={ds.seed!r} noise_std={ds.noise_std!r}",
        "labels=" + "|".join(ds.dictionary.basis_labels),
        "columns=" + cols,
    ]
    nS = ds.dictionary.size
    for k, s in enumerate(ds.samples):
        svals = ds.Z0[ds.n_aug :, k] if nS else np.zeros(0)
        row = np.concatenate([s.xi, s.eta, s.v, svals, s.xi_next, s.x_pos_next])
        lines.append(" ".join(repr(float(x)) for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path, dictionary: Dictionary | None = None) -> LiftedDataset:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _FMT_VERSION:
        raise DomainError(f"not a {_FMT_VERSION} file")
    meta = dict(item.split("=", 1) for item in lines[1].split())
    n, m, N = int(meta["n"]), int(meta["m"]), int(meta["N"])
    nS = int(meta["n_S"])
    Ts = float(meta["Ts"])
    seed = None if meta["seed"] == "None" else int(meta["seed"])
    noise_std = float(meta["noise_std"])
    labels = tuple(lines[2][len("labels="):].split("|")) if nS else ()
    if dictionary is None:
        dictionary = Dictionary(basis_labels=labels)
    rows = [np.array([float(tok) for tok in ln.split()]) for ln in lines[4 : 4 + N]]
    d = n + m
    xi_seq = np.zeros((N + 1, d))
    eta_rows = np.zeros((N, 2))
    v_seq = np.zeros((N, m))
    S = np.zeros((N, nS))
    for k, row in enumerate(rows):
        off = 0
        xi_seq[k] = row[off : off + d]; off += d
        eta_rows[k] = row[off : off + 2]; off += 2
        v_seq[k] = row[off : off + m]; off += m
        S[k] = row[off : off + nS]; off += nS
        xi_seq[k + 1] = row[off : off + d]; off += d
    # rebuild matrices directly from stored values (no dictionary evaluation)
    V0 = v_seq.T.copy()
    Z0 = np.vstack([xi_seq[:N].T, eta_rows.T, S.T])
    x_pos = xi_seq[:N, :2]
    Xi1 = np.vstack([xi_seq[1:].T, (eta_rows + Ts * x_pos).T])
    samples = tuple(
        Sample(xi=xi_seq[k].copy(), eta=eta_rows[k].copy(), v=v_seq[k].copy(),
               xi_next=xi_seq[k + 1].copy(), x_pos_next=xi_seq[k + 1, :2].copy())
        for k in range(N)
    )
    return LiftedDataset(n=n, m=m, Ts=Ts, dictionary=dictionary, samples=samples,
                         V0=V0, Z0=Z0, Xi1=Xi1, seed=seed, noise_std=noise_std)
