"""Unitary simulation of dilations and comparison with master-equation oracles."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from .core import SIGMA_X, dagger, is_density_matrix, kron, partial_trace_ancilla, trace_distance
from .dilation import CutoffPolicy, DilationPath, apply_cutoff
from .fixtures import AnalyticFixture, ClampedFixture, rwa_functions
from .generators import LindbladSpec, TimeGrid, evolve_state_master
from .propagators import UnitaryIntegrator

logger = logging.getLogger(__name__)

PLUS = np.full((2, 2), 0.5, dtype=complex)


class DivergentStartError(ValueError):
    """A divergent Hamiltonian would be evaluated at ``t = 0``."""


@dataclass
class SimulationResult:
    grid: TimeGrid
    reduced: np.ndarray  # (n_points, d, d)
    full: Optional[np.ndarray] = None  # (n_points, dR, dR)
    observables: Dict[str, np.ndarray] = field(default_factory=dict)
    unitaries: Optional[np.ndarray] = None
    reunitarizations: list = field(default_factory=list)

    def check_states(self, tol: float = 1e-8) -> bool:
        d = self.reduced.shape[-1]
        return all(is_density_matrix(r, tol) for r in self.reduced.reshape(-1, d, d))


@dataclass(frozen=True)
class ComparisonReport:
    grid: TimeGrid
    distances: np.ndarray
    max_distance: float
    tol: float
    bound: Optional[np.ndarray] = None

    @property
    def passed(self) -> bool:
        return bool(self.max_distance < self.tol)

    def to_dict(self) -> dict:
        return {"max_trace_distance": self.max_distance, "tol": self.tol,
                "passed": self.passed, "n_points": len(self.distances)}


@dataclass(frozen=True)
class ErrorBound:
    times: np.ndarray
    bound: np.ndarray  # int_0^t |H - H_T|
    actual: Optional[np.ndarray] = None  # |U - U_T|

    @property
    def holds(self) -> bool:
        if self.actual is None:
            raise ValueError("no actual unitary error to compare with")
        ok = np.isfinite(self.bound)
        return bool(np.all(self.actual[ok] <= self.bound[ok] * (1 + 1e-12) + 1e-14))


DilationSource = Union[DilationPath, AnalyticFixture, ClampedFixture]


def _path_window(path: DilationPath, grid: TimeGrid) -> int:
    """Index of ``grid.t_start`` on the path grid; the grids must share a step."""
    pg = path.grid
    i0 = pg.index_of(grid.t_start)
    if (abs(pg.times[i0] - grid.t_start) > 1e-9 * max(1.0, pg.dt)
            or abs(pg.dt - grid.dt) > 1e-12 * pg.dt or i0 + grid.n_steps > pg.n_steps):
        raise ValueError("simulation grid is not a window of the dilation grid")
    return i0


def evolve_dilated(
    source: DilationSource,
    rho0: np.ndarray,
    grid: Optional[TimeGrid] = None,
    u0: Optional[np.ndarray] = None,
    cutoff: Optional[CutoffPolicy] = None,
    keep_full: bool = False,
    observables: Optional[Dict[str, np.ndarray]] = None,
    unitarity_tol: float = 1e-10,
) -> SimulationResult:
    """Propagate ``rho0 kron |0><0|`` under the dilation and trace out the ancilla.

    ``rho0`` may be a batch ``(m, d, d)``; ``reduced`` is then ``(m, n, d, d)``.
    For a :class:`DilationPath` the grid defaults to the path grid and may be a
    later window of it, in which case the path unitary at the window start is
    the initial condition. For a fixture starting at ``t > 0`` the initial
    unitary comes from :meth:`AnalyticFixture.initial_unitary`.
    """
    if isinstance(source, DilationPath):
        path = source
        if cutoff is not None:
            path = apply_cutoff(path, cutoff).path
        grid = grid or path.grid
        i0 = _path_window(path, grid)
        if path.hamiltonians is None:
            raise ValueError("dilation path has no Hamiltonian")
        if i0 < path.h_valid_from:
            raise DivergentStartError(
                f"Hamiltonian diverges at grid index {i0} (t = {path.grid.times[i0]:.3g}); "
                "start later or supply a cutoff")
        hamiltonian = path.hamiltonians[i0: i0 + len(grid)]
        if u0 is None:
            u0 = path.unitaries[i0] if path.unitaries is not None else np.eye(path.total_dim)
        d, r = path.system_dim, path.ancilla_dim
    else:
        if grid is None:
            raise ValueError("a grid is required for fixture simulations")
        fixture = source
        if cutoff is not None:
            if cutoff.mode != "prefactor_clamp":
                raise ValueError("fixtures support prefactor_clamp cutoffs only")
            fixture = source.clamped(cutoff.c)
        if grid.t_start <= 0 and fixture.diverges_at_zero:
            raise DivergentStartError(
                f"{source.name} Hamiltonian diverges at t = 0; start at t > 0 or supply a cutoff")
        hamiltonian = fixture.hamiltonian
        if u0 is None:
            u0 = fixture.initial_unitary(grid.t_start)
        d, r = 2, 2
    integ = UnitaryIntegrator(unitarity_tol)
    us = integ.run(hamiltonian, grid.times, u0)
    return _reduce(grid, us, rho0, d, r, keep_full, observables, integ.reunitarizations)


def _reduce(grid, us, rho0, d, r, keep_full, observables, events):
    rho0 = np.asarray(rho0, dtype=complex)
    omega = np.zeros((r, r), dtype=complex)
    omega[0, 0] = 1.0
    if rho0.ndim == 2:
        rho_full0 = kron(rho0, omega)
    else:
        rho_full0 = np.einsum("mij,kl->mikjl", rho0, omega).reshape(len(rho0), d * r, d * r)
    if rho_full0.ndim == 3:
        rho_full0 = rho_full0[:, None]
    full = us @ rho_full0 @ dagger(us)
    reduced = partial_trace_ancilla(full, d, r)
    obs = {name: np.real(np.einsum("ij,...nji->...n", op, reduced))
           for name, op in (observables or {}).items()}
    return SimulationResult(grid, reduced, full if keep_full else None, obs, us, list(events))


def oracle_path(spec: LindbladSpec, rho0: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Master-equation reference on ``grid``, started from ``rho0`` at ``t = 0``.

    When ``grid`` starts later, the oracle integrates from 0 with the same
    step and returns the matching window.
    """
    if grid.t_start == 0:
        return evolve_state_master(spec, rho0, grid)
    n_pre = int(round(grid.t_start / grid.dt))
    if abs(n_pre * grid.dt - grid.t_start) > 1e-9 * grid.dt:
        # window start off the step lattice: reach it with a separate grid
        pre = TimeGrid(0.0, grid.t_start, max(1, int(np.ceil(grid.t_start / grid.dt))))
        start = evolve_state_master(spec, rho0, pre)[..., -1, :, :]
        return evolve_state_master(spec, start, grid)
    whole = TimeGrid(0.0, grid.t_end, n_pre + grid.n_steps)
    out = evolve_state_master(spec, rho0, whole)
    return out[..., n_pre:, :, :]


def local_channels_oracle(superop_paths: Sequence[np.ndarray], rho0: np.ndarray) -> np.ndarray:
    """Apply independent single-subsystem channels to a joint state.

    ``superop_paths[i]`` is the ``(n_points, d_i^2, d_i^2)`` channel path of
    subsystem ``i`` (first subsystem most significant in ``rho0``).
    """
    dims = [int(round(np.sqrt(s.shape[-1]))) for s in superop_paths]
    n_sub = len(dims)
    total = int(np.prod(dims))
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (total, total):
        raise ValueError(f"state shape {rho0.shape} does not match subsystems {dims}")
    n_pts = len(superop_paths[0])
    out = np.empty((n_pts, total, total), dtype=complex)
    letters = "abcdefghijklmnopqrstuvwxyz"
    for t in range(n_pts):
        x = rho0.reshape(dims + dims)
        for i, (s, d) in enumerate(zip(superop_paths, dims)):
            # s[a' + d b', a + d b] as a tensor s4[b', a', b, a]
            s4 = s[t].reshape(d, d, d, d)
            rows = list(letters[:n_sub])
            cols = list(letters[n_sub: 2 * n_sub])
            src = "".join(rows + cols)
            dst_rows, dst_cols = rows.copy(), cols.copy()
            dst_rows[i], dst_cols[i] = "Y", "Z"
            x = np.einsum(f"ZY{cols[i]}{rows[i]},{src}->{''.join(dst_rows + dst_cols)}", s4, x)
        out[t] = x.reshape(total, total)
    return out


def compare_paths(a, b, grid: Optional[TimeGrid] = None, tol: float = 1e-6,
                  bound: Optional[np.ndarray] = None) -> ComparisonReport:
    """Per-time trace distances between two state paths on the same grid."""
    if isinstance(a, SimulationResult):
        grid = grid or a.grid
        a = a.reduced
    if isinstance(b, SimulationResult):
        if grid is not None and b.grid != grid:
            raise ValueError("state paths are on different grids")
        grid = grid or b.grid
        b = b.reduced
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"state path shapes differ: {a.shape} vs {b.shape}")
    if grid is not None and a.shape[-3] != len(grid):
        raise ValueError(f"path has {a.shape[-3]} points, grid has {len(grid)}")
    flat_a = a.reshape((-1,) + a.shape[-3:])
    flat_b = b.reshape((-1,) + b.shape[-3:])
    dist = np.array([[trace_distance(x, y) for x, y in zip(pa, pb)]
                     for pa, pb in zip(flat_a, flat_b)])
    dist = dist.max(axis=0)
    return ComparisonReport(grid, dist, float(dist.max()), tol, bound)


def unitary_error_bound(
    h_target: Union[np.ndarray, Callable],
    h_applied: Union[np.ndarray, Callable],
    times: np.ndarray,
    u_target=None,
    u_applied=None,
) -> ErrorBound:
    """Cumulative ``int_0^t |H(t') - H_T(t')| dt'`` on ``times``.

    Sampled Hamiltonians use the trapezoidal rule. Callables are integrated
    interval by interval with adaptive quadrature, which handles an
    integrable singularity at the first point. ``u_target``/``u_applied``
    (arrays or callables) give the actual ``|U - U_T|`` alongside.
    """
    times = np.asarray(times, dtype=float)
    if callable(h_target) or callable(h_applied):
        ht = h_target if callable(h_target) else None
        ha = h_applied if callable(h_applied) else None
        if ht is None or ha is None:
            raise ValueError("pass both Hamiltonians as callables or both as arrays")

        def diff(t):
            return np.linalg.norm(ht(t) - ha(t), 2)

        pieces = [integrate.quad(diff, a, b, epsabs=1e-13, epsrel=1e-10, limit=200)[0]
                  for a, b in zip(times[:-1], times[1:])]
        bound = np.concatenate([[0.0], np.cumsum(pieces)])
    else:
        h_target = np.asarray(h_target)
        h_applied = np.asarray(h_applied)
        if h_target.shape != h_applied.shape or len(h_target) != len(times):
            raise ValueError("Hamiltonian paths must share the grid")
        norms = np.linalg.norm(h_target - h_applied, ord=2, axis=(1, 2))
        if not np.all(np.isfinite(norms)):
            raise ValueError("Hamiltonian difference is not finite on the grid")
        bound = integrate.cumulative_trapezoid(norms, times, initial=0.0)
    actual = None
    if u_target is not None and u_applied is not None:
        ut = np.array([u_target(t) for t in times]) if callable(u_target) else np.asarray(u_target)
        ua = np.array([u_applied(t) for t in times]) if callable(u_applied) else np.asarray(u_applied)
        actual = np.linalg.norm(ut - ua, ord=2, axis=(1, 2))
    return ErrorBound(times, bound, actual)


def cutoff_error_bound(path: DilationPath, clamped: DilationPath) -> ErrorBound:
    """Unitary-error bound for a clamped sampled path.

    The target Hamiltonian is not finite before ``path.h_valid_from``, so
    the bound starts from the actual gap there:
    ``|U - U_T|(t) <= |U - U_T|(t_v) + int_{t_v}^t |H - H_T|``. Earlier
    points carry ``nan``.
    """
    v = path.h_valid_from
    ts = path.grid.times
    actual = np.linalg.norm(path.unitaries - clamped.unitaries, ord=2, axis=(1, 2))
    diff = np.linalg.norm(path.hamiltonians[v:] - clamped.hamiltonians[v:], ord=2, axis=(1, 2))
    bound = np.full(len(ts), np.nan)
    bound[v:] = actual[v] + integrate.cumulative_trapezoid(diff, ts[v:], initial=0.0)
    return ErrorBound(ts, bound, actual)


# --- figure datasets -----------------------------------------------------------

@dataclass(frozen=True)
class DecayDataset:
    """Survival of ``|+><+|`` under clamped dephasing dilations."""

    times: np.ndarray
    exact: np.ndarray
    survival: Dict[float, np.ndarray]
    inset_times: np.ndarray
    inset_exact: np.ndarray
    inset_survival: Dict[float, np.ndarray]
    clamp_times: Dict[float, float]

    def max_deviation(self) -> Dict[float, float]:
        return {c: float(np.max(np.abs(s - self.exact))) for c, s in self.survival.items()}


def fig2_experiment(gamma: float, cutoffs: Sequence[float], grid: TimeGrid,
                    inset_points: int = 2001) -> DecayDataset:
    """Decay of ``|+>`` under the clamped dephasing dilation for each cutoff.

    ``gamma`` is the master-equation rate, ``drho/dt = -gamma[sz,[sz,rho]]``;
    cutoffs cap the dilation prefactor. The inset covers twice the largest
    clamp window at higher resolution.
    """
    fixture = AnalyticFixture("spin_boson", gamma=gamma).resolve_convention()
    observable = {"plus": 0.5 * (np.eye(2) + SIGMA_X)}

    def exact(ts):
        return 0.5 * (1 + np.exp(-4 * gamma * ts))

    survival, inset, windows = {}, {}, {}
    t_inset = 2 * max(fixture.clamp_time(c) for c in cutoffs)
    inset_grid = TimeGrid(0.0, t_inset, inset_points - 1)
    for c in cutoffs:
        policy = CutoffPolicy(c)
        windows[c] = fixture.clamp_time(c)
        for g, store in ((grid, survival), (inset_grid, inset)):
            sim = evolve_dilated(fixture, PLUS, g, cutoff=policy, observables=observable)
            store[c] = sim.observables["plus"]
    return DecayDataset(grid.times, exact(grid.times), survival, inset_grid.times,
                        exact(inset_grid.times), inset, windows)


def fig3_dataset(gamma: float, omega0: float, t_end: Optional[float] = None,
                 n_steps: int = 500) -> Dict[str, np.ndarray]:
    """Real parts of ``H0(t)``, ``f(t)``, ``g(t)`` of the resonant rotating-wave dilation.

    ``H0`` is infinite at ``t = 0``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    t_end = 5.0 / gamma if t_end is None else t_end
    ts = np.linspace(0.0, t_end, n_steps + 1)
    h0, f, g = rwa_functions(ts, gamma, omega0)
    return {"t": ts, "H0": h0.real, "f": f.real, "g": g.real}
