"""Time-dependent Lindbladians, channel propagation and the master-equation oracle."""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, special

from .core import (
    DEFAULT_TOL,
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    commutator_superop,
    reshuffle,
    hermitize,
)

PROFILE_KINDS = ("constant", "exponential", "sinusoidal", "polynomial", "tabulated")


class ProfileDomainError(ValueError):
    """Raised when a tabulated profile is evaluated outside its table."""


class CPTPViolation(RuntimeError):
    """A propagated channel failed the CPTP check."""

    def __init__(self, message, index=None, time=None):
        super().__init__(message)
        self.index = index
        self.time = time


@dataclass(frozen=True)
class TimeProfile:
    """Scalar function of time used for rates and Hamiltonian coefficients.

    kinds and parameters:

    * ``constant``: ``value``
    * ``exponential``: ``amplitude * t**power * exp(-rate * t)``
    * ``sinusoidal``: ``amplitude * cos(frequency * t + phase) + offset``
    * ``polynomial``: ``coefficients`` (lowest order first)
    * ``tabulated``: ``times``, ``values``; linear interpolation, no extrapolation
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "tabulated":
            times = np.asarray(self.params["times"], dtype=float)
            if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
                raise ValueError("tabulated profile needs strictly increasing times")
            if len(self.params["values"]) != len(times):
                raise ValueError("tabulated profile times/values length mismatch")

    @classmethod
    def constant(cls, value: float) -> "TimeProfile":
        return cls("constant", {"value": float(value)})

    def __call__(self, t):
        p = self.params
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.full_like(t, p["value"])
        elif self.kind == "exponential":
            out = p.get("amplitude", 1.0) * t ** p.get("power", 0) * np.exp(-p.get("rate", 0.0) * t)
        elif self.kind == "sinusoidal":
            out = p.get("amplitude", 1.0) * np.cos(
                p.get("frequency", 0.0) * t + p.get("phase", 0.0)
            ) + p.get("offset", 0.0)
        elif self.kind == "polynomial":
            out = np.polynomial.polynomial.polyval(t, p["coefficients"])
        else:
            times = np.asarray(p["times"], dtype=float)
            if np.any(t < times[0] - 1e-12) or np.any(t > times[-1] + 1e-12):
                raise ProfileDomainError(
                    f"t outside tabulated domain [{times[0]}, {times[-1]}]"
                )
            out = np.interp(t, times, np.asarray(p["values"], dtype=float))
        return float(out) if out.ndim == 0 else out

    def integral(self, t: float, t0: float = 0.0) -> float:
        """Integral of the profile over ``[t0, t]``."""
        p = self.params
        if self.kind == "constant":
            return p["value"] * (t - t0)
        if self.kind == "polynomial":
            anti = np.polynomial.polynomial.polyint(p["coefficients"])
            return float(
                np.polynomial.polynomial.polyval(t, anti)
                - np.polynomial.polynomial.polyval(t0, anti)
            )
        if self.kind == "sinusoidal":
            a, w = p.get("amplitude", 1.0), p.get("frequency", 0.0)
            phi, off = p.get("phase", 0.0), p.get("offset", 0.0)
            if w == 0:
                return (a * np.cos(phi) + off) * (t - t0)
            return a / w * (np.sin(w * t + phi) - np.sin(w * t0 + phi)) + off * (t - t0)
        if self.kind == "tabulated":
            times = np.asarray(p["times"], dtype=float)
            grid = np.union1d(times[(times > t0) & (times < t)], [t0, t])
            return float(integrate.trapezoid(self(grid), grid))
        if self.kind == "exponential" and p.get("rate", 0.0) > 0 and p.get("power", 0) > -1:
            # amplitude * Gamma(k+1)/r^(k+1) * P(k+1, r t)
            a, k, r = p.get("amplitude", 1.0), p.get("power", 0), p["rate"]
            scale = a * special.gamma(k + 1) / r ** (k + 1)
            return float(scale * (special.gammainc(k + 1, r * t) - special.gammainc(k + 1, r * t0)))
        value, _ = integrate.quad(self, t0, t, epsabs=1e-13, epsrel=1e-12, limit=200)
        return value

    def scaled(self, factor: float) -> "TimeProfile":
        p = dict(self.params)
        if self.kind == "constant":
            p["value"] = factor * p["value"]
        elif self.kind in ("exponential", "sinusoidal"):
            p["amplitude"] = factor * p.get("amplitude", 1.0)
            if self.kind == "sinusoidal":
                p["offset"] = factor * p.get("offset", 0.0)
        elif self.kind == "polynomial":
            p["coefficients"] = [factor * c for c in p["coefficients"]]
        else:
            p["values"] = [factor * v for v in p["values"]]
        return TimeProfile(self.kind, p)

    def to_dict(self) -> dict:
        params = {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                  for k, v in self.params.items()}
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, d: dict) -> "TimeProfile":
        return cls(d["kind"], dict(d.get("params", {})))


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.t_start < 0:
            raise ValueError("t_start must be >= 0")
        if self.n_steps < 1 or not self.t_end > self.t_start:
            raise ValueError("grid must be strictly increasing with n_steps >= 1")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)

    def __len__(self):
        return self.n_steps + 1

    def index_of(self, t: float) -> int:
        """Nearest grid index to ``t``."""
        return int(round((t - self.t_start) / self.dt))

    def window(self, i0: int, i1: Optional[int] = None) -> "TimeGrid":
        """Sub-grid covering indices ``i0..i1`` inclusive."""
        i1 = self.n_steps if i1 is None else i1
        ts = self.times
        return TimeGrid(float(ts[i0]), float(ts[i1]), i1 - i0)


Term = Tuple[np.ndarray, TimeProfile]


@dataclass(frozen=True)
class LindbladSpec:
    """``drho/dt = -i[sum_h c_h(t) H_h, rho] + sum_j g_j(t) D[L_j](rho)``.

    ``D[L](rho) = L rho L^dag - {L^dag L, rho}/2``. Rates may be negative.
    """

    dim: int
    hamiltonian_terms: Tuple[Term, ...] = ()
    jump_terms: Tuple[Term, ...] = ()
    name: str = "custom"
    convention: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hamiltonian_terms", tuple(
            (np.asarray(h, dtype=complex), prof) for h, prof in self.hamiltonian_terms))
        object.__setattr__(self, "jump_terms", tuple(
            (np.asarray(op, dtype=complex), prof) for op, prof in self.jump_terms))
        for h, _ in self.hamiltonian_terms:
            if h.shape != (self.dim, self.dim):
                raise ValueError(f"Hamiltonian term has shape {h.shape}, expected {self.dim}")
            if np.max(np.abs(h - h.conj().T)) > DEFAULT_TOL:
                raise ValueError("Hamiltonian terms must be Hermitian")
        for op, _ in self.jump_terms:
            if op.shape != (self.dim, self.dim):
                raise ValueError(f"jump operator has shape {op.shape}, expected {self.dim}")

    def hamiltonian(self, t: float) -> np.ndarray:
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for op, prof in self.hamiltonian_terms:
            h += prof(t) * op
        return h

    def __add__(self, other: "LindbladSpec") -> "LindbladSpec":
        if self.dim != other.dim:
            raise ValueError("dimension mismatch")
        return LindbladSpec(
            self.dim,
            self.hamiltonian_terms + other.hamiltonian_terms,
            self.jump_terms + other.jump_terms,
            name=f"{self.name}+{other.name}",
        )

    def scaled(self, factor: float) -> "LindbladSpec":
        """Generator multiplied by ``factor``."""
        return LindbladSpec(
            self.dim,
            tuple((h, p.scaled(factor)) for h, p in self.hamiltonian_terms),
            tuple((op, p.scaled(factor)) for op, p in self.jump_terms),
            name=f"{factor}*{self.name}",
        )


@dataclass(frozen=True)
class ChannelFamily:
    grid: TimeGrid
    superops: np.ndarray  # (n_points, d^2, d^2)

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.superops.shape[-1])))

    def __len__(self):
        return len(self.superops)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """State path ``channel_t(rho)`` for every grid time."""
        from .core import apply_superop
        return apply_superop(self.superops, rho)


def lindblad_superop(spec: LindbladSpec, t: float) -> np.ndarray:
    """Column-stacking matrix of the generator at time ``t``."""
    d = spec.dim
    eye = np.eye(d)
    out = np.zeros((d * d, d * d), dtype=complex)
    for h, prof in spec.hamiltonian_terms:
        c = prof(t)
        if c != 0:
            out += c * commutator_superop(h)
    for op, prof in spec.jump_terms:
        g = prof(t)
        if g == 0:
            continue
        ldl = op.conj().T @ op
        out += g * (np.kron(op.conj(), op) - 0.5 * np.kron(eye, ldl) - 0.5 * np.kron(ldl.T, eye))
    return out


def _lindblad_rhs(spec: LindbladSpec, t: float, rho: np.ndarray) -> np.ndarray:
    # direct matrix form, deliberately independent of lindblad_superop
    h = spec.hamiltonian(t)
    out = -1j * (h @ rho - rho @ h)
    for op, prof in spec.jump_terms:
        g = prof(t)
        if g == 0:
            continue
        opd = op.conj().T
        ldl = opd @ op
        out = out + g * (op @ rho @ opd - 0.5 * (ldl @ rho + rho @ ldl))
    return out


def step_propagators(spec: LindbladSpec, grid: TimeGrid) -> np.ndarray:
    """One RK4 step map per grid interval: ``E[n+1] = P[n] @ E[n]``."""
    d2 = spec.dim ** 2
    ts = grid.times
    dt = grid.dt
    eye = np.eye(d2, dtype=complex)
    l_grid = np.array([lindblad_superop(spec, t) for t in ts])
    l_mid = np.array([lindblad_superop(spec, t + dt / 2) for t in ts[:-1]])
    props = np.empty((grid.n_steps, d2, d2), dtype=complex)
    for n in range(grid.n_steps):
        k1 = l_grid[n]
        k2 = l_mid[n] @ (eye + dt / 2 * k1)
        k3 = l_mid[n] @ (eye + dt / 2 * k2)
        k4 = l_grid[n + 1] @ (eye + dt * k3)
        props[n] = eye + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return props


def propagate_channel(
    spec: LindbladSpec,
    grid: TimeGrid,
    validate: bool = True,
    cptp_tol: float = 1e-7,
) -> ChannelFamily:
    """Time-ordered exponential of the generator by fixed-step RK4."""
    props = step_propagators(spec, grid)
    d2 = spec.dim ** 2
    superops = np.empty((len(grid), d2, d2), dtype=complex)
    superops[0] = np.eye(d2)
    for n in range(grid.n_steps):
        superops[n + 1] = props[n] @ superops[n]
    family = ChannelFamily(grid, superops)
    if validate:
        check_family_cptp(family, cptp_tol)
    return family


def check_family_cptp(family: ChannelFamily, tol: float) -> None:
    d = family.dim
    choi = reshuffle(family.superops)
    min_eigs = np.linalg.eigvalsh(hermitize(choi))[:, 0]
    tp = np.einsum("nkikj->nij", choi.reshape(-1, d, d, d, d)) - np.eye(d)
    tp_res = np.max(np.abs(tp), axis=(1, 2))
    bad = np.flatnonzero((min_eigs < -tol) | (tp_res > tol))
    if len(bad):
        n = int(bad[0])
        raise CPTPViolation(
            f"channel not CPTP at grid index {n} (t={family.grid.times[n]:.6g}): "
            f"min Choi eigenvalue {min_eigs[n]:.3e}, TP residual {tp_res[n]:.3e}",
            index=n,
            time=float(family.grid.times[n]),
        )


def evolve_state_master(
    spec: LindbladSpec,
    rho0: np.ndarray,
    grid: TimeGrid,
    trace_tol: float = 1e-8,
) -> np.ndarray:
    """RK4 integration of the master equation; returns ``(n_points, d, d)``.

    ``rho0`` may also be a batch ``(m, d, d)``, giving ``(m, n_points, d, d)``.
    """
    rho = np.array(rho0, dtype=complex)
    batched = rho.ndim == 3
    if rho.shape[-1] != spec.dim:
        raise ValueError(f"state dimension {rho.shape[-1]} does not match spec {spec.dim}")
    ts = grid.times
    dt = grid.dt
    path = np.empty((len(ts),) + rho.shape, dtype=complex)
    path[0] = rho
    f = lambda t, r: _lindblad_rhs(spec, t, r)  # noqa: E731
    for n in range(grid.n_steps):
        t = ts[n]
        k1 = f(t, rho)
        k2 = f(t + dt / 2, rho + dt / 2 * k1)
        k3 = f(t + dt / 2, rho + dt / 2 * k2)
        k4 = f(t + dt, rho + dt * k3)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        path[n + 1] = rho
    drift = np.max(np.abs(np.trace(path, axis1=-2, axis2=-1) - 1))
    if drift > trace_tol:
        raise RuntimeError(f"trace drift {drift:.3e} exceeds {trace_tol:.1e}")
    if batched:
        path = np.moveaxis(path, 0, 1)
    return path


# --- presets -------------------------------------------------------------

def dephasing(gamma: float) -> LindbladSpec:
    """``drho/dt = -gamma [sz, [sz, rho]]``; coherences decay as exp(-4 gamma t)."""
    return spin_boson(TimeProfile.constant(gamma), name="dephasing")


def spin_boson(rate: TimeProfile, name: str = "spin_boson") -> LindbladSpec:
    """``drho/dt = -gamma(t) [sz, [sz, rho]]`` mapped to a sigma_z jump at rate 2 gamma(t)."""
    return LindbladSpec(
        2,
        jump_terms=((SIGMA_Z, rate.scaled(2.0)),),
        name=name,
        convention="drho/dt = -gamma(t)[sz,[sz,rho]]  (jump sz at rate 2*gamma)",
    )


def amplitude_damping(gamma: float, omega0: float = 0.0) -> LindbladSpec:
    """``drho/dt = -gamma({s+s-, rho} - 2 s- rho s+) - i[omega0/2 sz, rho]``.

    The bare ``omega0/2 sz`` term is read as a Hamiltonian commutator.
    Excited population of ``|1>`` decays as exp(-2 gamma t).
    """
    terms = ()
    if omega0:
        terms = ((SIGMA_Z, TimeProfile.constant(omega0 / 2)),)
    return LindbladSpec(
        2,
        hamiltonian_terms=terms,
        jump_terms=((SIGMA_MINUS, TimeProfile.constant(2 * gamma)),),
        name="amplitude_damping",
        convention="drho/dt = -gamma({s+s-,rho} - 2 s- rho s+) - i[omega0/2 sz, rho]",
    )


def drive_x(omega: float) -> LindbladSpec:
    """Constant drive ``-i Omega [sx, rho]``."""
    return LindbladSpec(2, hamiltonian_terms=((SIGMA_X, TimeProfile.constant(omega)),),
                        name="drive_x")


def driven_damping(gamma: float, omega: float, omega0: float = 0.0) -> LindbladSpec:
    spec = amplitude_damping(gamma, omega0) + drive_x(omega)
    return LindbladSpec(spec.dim, spec.hamiltonian_terms, spec.jump_terms,
                        name="driven_damping",
                        convention="amplitude damping - i Omega [sx, rho]")


def rwa_drive(omega: float, frequency: float) -> LindbladSpec:
    """Rotating-wave form of ``-i Omega cos(w t)[sx, rho]``:
    ``(Omega/2)(e^{-iwt} s- + e^{iwt} s+) = (Omega/2)(cos(wt) sx + sin(wt) sy)``."""
    return LindbladSpec(
        2,
        hamiltonian_terms=(
            (SIGMA_X, TimeProfile("sinusoidal", {"amplitude": omega / 2, "frequency": frequency})),
            (SIGMA_Y, TimeProfile("sinusoidal", {"amplitude": omega / 2, "frequency": frequency,
                                                 "phase": -np.pi / 2})),
        ),
        name="rwa_drive",
    )


def rwa_driving(gamma: float, omega0: float, omega: float,
                frequency: Optional[float] = None) -> LindbladSpec:
    """Amplitude damping with a rotating-wave sinusoidal drive (resonant by default)."""
    frequency = omega0 if frequency is None else frequency
    spec = amplitude_damping(gamma, omega0) + rwa_drive(omega, frequency)
    return LindbladSpec(spec.dim, spec.hamiltonian_terms, spec.jump_terms,
                        name="rwa_driving",
                        convention="amplitude damping - i[(Omega/2)(cos(wt) sx + sin(wt) sy), rho]")


def unitary_only(h: np.ndarray, coefficient: Optional[TimeProfile] = None) -> LindbladSpec:
    h = np.asarray(h, dtype=complex)
    coefficient = coefficient or TimeProfile.constant(1.0)
    return LindbladSpec(h.shape[0], hamiltonian_terms=((h, coefficient),),
                        name="unitary_only", convention="drho/dt = -i c(t)[H, rho]")
