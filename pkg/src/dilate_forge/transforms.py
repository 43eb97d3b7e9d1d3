"""Transformations of dilations: frame changes, composition, perturbation, rescaling."""
import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, linalg

from .core import dagger, embed, hermitize, kraus_to_superop, polar_unitary, reshuffle
from .dilation import (
    DilationPath,
    EigenTrack,
    NotFactorableError,
    dilate,
    factor_residual,
    finite_difference,
)
from .generators import (
    LindbladSpec,
    TimeGrid,
    lindblad_superop,
    step_propagators,
)

logger = logging.getLogger(__name__)


# --- frame change -------------------------------------------------------------

@dataclass(frozen=True)
class FrameSpec:
    """Constant frame Hamiltonian ``H0``; ``U0(t) = exp(-i H0 t)``."""

    h0: np.ndarray

    def __post_init__(self):
        h0 = np.asarray(self.h0, dtype=complex)
        if h0.ndim != 2 or h0.shape[0] != h0.shape[1]:
            raise ValueError("frame Hamiltonian must be square")
        if np.max(np.abs(h0 - h0.conj().T), initial=0.0) > 1e-12:
            raise ValueError("frame Hamiltonian must be Hermitian")
        object.__setattr__(self, "h0", h0)

    def unitary(self, t) -> np.ndarray:
        """``U0(t)`` for a scalar or an array of times (via one eigendecomposition)."""
        w, v = np.linalg.eigh(self.h0)
        t = np.asarray(t, dtype=float)
        phases = np.exp(-1j * np.multiply.outer(t, w))
        return np.einsum("ij,...j,kj->...ik", v, phases, v.conj())


def frame_change(frame: FrameSpec, tilde: DilationPath) -> DilationPath:
    """Lab-frame dilation from one built in the frame rotating with ``H0``.

    ``U = (U0 kron 1) U~`` and ``H = H0 kron 1 + (U0 kron 1) H~ (U0 kron 1)^dag``.
    """
    d, r = tilde.system_dim, tilde.ancilla_dim
    if frame.h0.shape[0] != d:
        raise ValueError(f"frame acts on dimension {frame.h0.shape[0]}, system has {d}")
    eye_r = np.eye(r)
    u0 = frame.unitary(tilde.grid.times)
    w = np.einsum("nij,kl->nikjl", u0, eye_r).reshape(len(u0), d * r, d * r)
    unitaries = w @ tilde.unitaries if tilde.unitaries is not None else None
    hams = None
    if tilde.hamiltonians is not None:
        hams = np.kron(frame.h0, eye_r) + w @ tilde.hamiltonians @ dagger(w)
    return replace(tilde, unitaries=unitaries, hamiltonians=hams)


# --- commuting composition ------------------------------------------------------

def path_superops(path: DilationPath, indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Channel superoperators read off the dilation's Kraus operators."""
    if indices is None:
        indices = range(len(path.grid))
    return np.array([kraus_to_superop(path.kraus(i)) for i in indices])


def commutator_residual(p1: DilationPath, p2: DilationPath, n_samples: int = 20) -> float:
    """``max_t |e1 e2 - e2 e1|`` at evenly spaced grid points."""
    idx = np.unique(np.linspace(0, len(p1.grid) - 1, n_samples).astype(int))
    s1 = path_superops(p1, idx)
    s2 = path_superops(p2, idx)
    return float(np.max(np.linalg.norm(s1 @ s2 - s2 @ s1, ord=2, axis=(1, 2))))


def compose_commuting(d1: DilationPath, d2: DilationPath, tol: float = 1e-8,
                      n_samples: int = 20) -> DilationPath:
    """Dilation of ``e1 o e2`` for commuting channel families.

    ``d1`` acts on system A and ancilla C, ``d2`` on A and B. The result acts on
    A kron B kron C (ancilla B kron C starting in ``|00>``) with
    ``U = U1 U2`` and ``H = H1 + U1 H2 U1^dag``.
    """
    if d1.grid != d2.grid:
        raise ValueError("dilations must share a grid")
    if d1.system_dim != d2.system_dim:
        raise ValueError("dilations act on different system dimensions")
    res = commutator_residual(d1, d2, n_samples)
    if res > tol:
        raise ValueError(f"channels do not commute: residual {res:.2e} > {tol:.1e}")
    a, c, b = d1.system_dim, d1.ancilla_dim, d2.ancilla_dim
    dims = [a, b, c]

    def lift1(m):
        return np.array([embed(x, dims, [0, 2]) for x in m])

    def lift2(m):
        return np.array([embed(x, dims, [0, 1]) for x in m])

    u1, u2 = lift1(d1.unitaries), lift2(d2.unitaries)
    h1, h2 = lift1(d1.hamiltonians), lift2(d2.hamiltonians)
    return DilationPath(
        d1.grid, a, b * c,
        unitaries=u1 @ u2,
        hamiltonians=h1 + u1 @ h2 @ dagger(u1),
        h_valid_from=max(d1.h_valid_from, d2.h_valid_from),
    )


# --- perturbation ---------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationSpec:
    """Generator ``L0 + delta L1``."""

    base: LindbladSpec
    perturbation: LindbladSpec
    delta: float

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.base.dim != self.perturbation.dim:
            raise ValueError("base and perturbation dimensions differ")

    @property
    def full(self) -> LindbladSpec:
        return self.base + self.perturbation.scaled(self.delta)


def perturbative_channel(p: PerturbationSpec, grid: TimeGrid) -> np.ndarray:
    """First-order channel correction on the grid (superoperators).

    ``e1(t_n) = int_0^{t_n} E0(t_n, s) L1(s) E0(s, 0) ds`` by the trapezoidal
    rule, with ``E0`` built from the base step maps. The running sums obey
    ``B_n = P_n B_{n-1} + F_n`` with ``F_m = L1(t_m) E0(t_m, 0)``.
    """
    steps = step_propagators(p.base, grid)
    n = len(grid)
    d2 = p.base.dim ** 2
    ts = grid.times
    out = np.zeros((n, d2, d2), dtype=complex)
    e = np.eye(d2, dtype=complex)
    f = lindblad_superop(p.perturbation, ts[0]) @ e
    b = f.copy()
    g = f.copy()
    for i in range(1, n):
        e = steps[i - 1] @ e
        f = lindblad_superop(p.perturbation, ts[i]) @ e
        b = steps[i - 1] @ b + f
        g = steps[i - 1] @ g
        out[i] = grid.dt * (b - 0.5 * f - 0.5 * g)
    return out


class RankChangeError(ValueError):
    """The perturbation populates a zero Choi eigenvalue at first order."""


def perturbative_kraus(track: EigenTrack, choi1: np.ndarray, rank_tol: float = 1e-6,
                       degeneracy_tol: float = 1e-8) -> np.ndarray:
    """First-order Kraus corrections from nondegenerate eigenvalue perturbation.

    With ``Lambda0 v_k = l_k v_k`` and ``Lambda1`` the Choi correction,
    ``l_k' = <v_k|Lambda1|v_k>`` and
    ``v_k' = sum_{j != k} <v_j|Lambda1|v_k> / (l_k - l_j) v_j``, where the
    kernel of ``Lambda0`` enters with ``l_j = 0``. Then
    ``M_k' = unvec_rows(l_k'/(2 sqrt(l_k)) v_k + sqrt(l_k) v_k')``.
    """
    lam = track.eigenvalues
    vecs = track.eigenvectors
    n, d2, r = vecs.shape
    d = track.dim
    out = np.zeros((n, r, d, d), dtype=complex)
    for i in range(n):
        v = vecs[i]
        c1 = hermitize(choi1[i])
        scale = max(1.0, float(np.max(np.abs(lam[i]))))
        null = np.eye(d2) - v @ v.conj().T
        kernel_block = null @ c1 @ null
        kb = float(np.linalg.norm(kernel_block, 2))
        if kb > rank_tol * scale:
            raise RankChangeError(
                f"perturbation changes the Kraus rank at grid index {i} "
                f"(kernel block norm {kb:.2e}); the O(sqrt(delta)) branch is not supported")
        coup = v.conj().T @ c1 @ v  # (r, r)
        leak = null @ c1 @ v  # components into the kernel
        for k in range(r):
            lk = lam[i, k]
            if lk <= degeneracy_tol * scale:
                continue
            dv = leak[:, k] / lk
            for j in range(r):
                if j == k:
                    continue
                gap = lk - lam[i, j]
                if abs(gap) <= degeneracy_tol * scale:
                    if abs(coup[j, k]) > rank_tol * scale:
                        raise ValueError(
                            f"perturbation mixes degenerate tracks {j}, {k} at grid index {i}")
                    continue
                dv = dv + coup[j, k] / gap * v[:, j]
            dl = coup[k, k].real
            m1 = dl / (2 * np.sqrt(lk)) * v[:, k] + np.sqrt(lk) * dv
            out[i, k] = m1.reshape(d, d)
    return out


@dataclass(frozen=True)
class PerturbativeDilation:
    grid: TimeGrid
    u1: np.ndarray  # (n, D, D)
    h1: np.ndarray  # (n, D, D)
    h_valid_from: int = 0


def _min_norm_correction(u0: np.ndarray, c1: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Minimum-Frobenius-norm ``U1 = K U0`` with ``K`` anti-Hermitian and
    ``U1[:, cols] = c1``."""
    v0 = u0[:, cols]
    a = v0.conj().T @ c1
    a = 0.5 * (a - a.conj().T)
    proj = np.eye(u0.shape[0]) - v0 @ v0.conj().T
    k = v0 @ a @ v0.conj().T + proj @ c1 @ v0.conj().T - v0 @ c1.conj().T @ proj
    return k @ u0


def perturbative_dilation(base: DilationPath, kraus1: np.ndarray, fd_order: int = 6
                          ) -> PerturbativeDilation:
    """First-order unitary and Hamiltonian corrections of a dilation.

    ``U1`` matches the Kraus corrections on the ancilla-``|0>`` columns and keeps
    ``U1 U0^dag`` anti-Hermitian; ``H1 = (i dU1/dt - H0 U1) U0^dag``.
    """
    d, r = base.system_dim, base.ancilla_dim
    n = len(base.grid)
    kraus1 = np.asarray(kraus1)
    if kraus1.shape != (n, r, d, d):
        raise ValueError(f"Kraus corrections have shape {kraus1.shape}, expected {(n, r, d, d)}")
    cols = np.arange(d) * r
    # constrained columns: C1[a*r + k, b] = M1_k[a, b]
    c1 = np.moveaxis(kraus1, 1, 2).reshape(n, d * r, d)
    u1 = np.array([_min_norm_correction(base.unitaries[i], c1[i], cols) for i in range(n)])
    du1 = finite_difference(u1, base.grid.dt, fd_order)
    h1 = (1j * du1 - base.hamiltonians @ u1) @ dagger(base.unitaries)
    return PerturbativeDilation(base.grid, u1, h1, base.h_valid_from)


def perturbative_pipeline(p: PerturbationSpec, grid: TimeGrid, fd_order: int = 6,
                          rank_tol: float = 1e-6) -> DilationPath:
    """Dilation of ``L0 + delta L1`` to first order in ``delta``.

    Returns a path with ``H = Herm(H0 + delta H1)`` and
    ``U = polar(U0 + delta U1)``.
    """
    res = dilate(p.base, grid, fd_order=fd_order, full=True)
    choi1 = reshuffle(perturbative_channel(p, grid))
    kraus1 = perturbative_kraus(res.track, choi1, rank_tol)
    pert = perturbative_dilation(res.path, kraus1, fd_order)
    path = res.path
    hams = hermitize(path.hamiltonians + p.delta * pert.h1)
    us = np.array([polar_unitary(u) for u in path.unitaries + p.delta * pert.u1])
    return replace(path, hamiltonians=hams, unitaries=us)


# --- time rescaling -------------------------------------------------------------

@dataclass(frozen=True)
class RescaleMap:
    """``H(t) = h(t) X`` replayed as the constant ``h0 X`` for time ``tau(t)``."""

    times: np.ndarray
    h: np.ndarray  # nan where the path Hamiltonian is not valid
    h0: float
    tau: np.ndarray
    x: np.ndarray

    def unitary(self, index: int) -> np.ndarray:
        return linalg.expm(-1j * self.h0 * self.tau[index] * self.x)

    @property
    def hamiltonian(self) -> np.ndarray:
        return self.h0 * self.x


def _angle_from_unitary(u: np.ndarray, x: np.ndarray) -> float:
    """``theta`` with ``u = exp(-i theta x)``, from the top eigenvector of ``x``."""
    w, v = np.linalg.eigh(x)
    j = int(np.argmax(np.abs(w)))
    z = v[:, j].conj() @ u @ v[:, j]
    return float(-np.angle(z) / w[j])


def rescale_time(dp: DilationPath, h0: float = 1.0, bound_tol: float = 1e-6,
                 anchor: Optional[int] = None) -> RescaleMap:
    """Factor ``H = h(t) X`` and tabulate ``tau(t) = (1/h0) int h``.

    The integral is anchored at grid index ``anchor`` with the angle read off
    the path unitary there; the rest uses cumulative Simpson quadrature of
    ``h``. Points before the anchor take their angle from the unitary too.
    By default the anchor sits 20 steps past a divergent start, clear of
    the least accurate finite-difference samples, and at 0 otherwise.

    The path counts as factorable when the discarded part integrates to at
    most ``bound_tol``; by the norm-integral bound on unitary errors this
    caps its effect on ``U``. A pointwise test would reject late times where
    ``|H|`` sits at the finite-difference noise floor.
    """
    if not h0 > 0:
        raise ValueError("h0 must be positive")
    v0 = dp.h_valid_from
    ts = dp.grid.times
    hv, x, resid, _ = factor_residual(dp.hamiltonians, v0)
    drop = float(integrate.trapezoid(resid, ts[v0:]))
    if drop > bound_tol:
        raise NotFactorableError(
            f"H(t) is not h(t) X: discarded part integrates to {drop:.2e} > {bound_tol:.1e}, "
            f"largest at grid index {v0 + int(np.argmax(resid))}")
    h = np.full(len(ts), np.nan)
    h[v0:] = hv
    if anchor is None:
        anchor = min(v0 + 20, len(ts) - 1) if v0 else 0
    if anchor < v0:
        raise ValueError(f"anchor {anchor} precedes the first valid Hamiltonian {v0}")
    if dp.unitaries is None and anchor:
        raise ValueError("a nonzero anchor needs the path unitaries")
    theta = np.empty(len(ts))
    for i in range(anchor + 1):
        theta[i] = _angle_from_unitary(dp.unitaries[i], x) if i else 0.0
    theta[anchor:] = theta[anchor] + integrate.cumulative_simpson(
        h[anchor:], x=ts[anchor:], initial=0.0)
    return RescaleMap(ts, h, h0, theta / h0, x)


def asymptotic_tau(h: Callable[[float], float], h0: float, horizons: Sequence[float]) -> np.ndarray:
    """``(1/h0) int_0^T h`` for increasing horizons ``T``; convergence shows a finite ``tau``."""
    out = []
    for t_max in horizons:
        val, _ = integrate.quad(h, 0.0, t_max, epsabs=1e-13, epsrel=1e-12, limit=500)
        out.append(val / h0)
    return np.array(out)


# --- independent multi-qubit channels ---------------------------------------------

DEFAULT_MAX_DIM = 512


def tensor_independent(dilations: Sequence[DilationPath], n: Optional[int] = None,
                       max_dim: int = DEFAULT_MAX_DIM) -> DilationPath:
    """Dilation of independent channels on ``n`` subsystems.

    The global space is ordered ``[sys_1 .. sys_n, anc_1 .. anc_n]`` and
    ``H = sum_i H_i`` with each term acting on ``sys_i`` and ``anc_i`` only.
    A single path is repeated when ``n`` exceeds the number of inputs.
    """
    dilations = list(dilations)
    if n is None:
        n = len(dilations)
    if len(dilations) == 1 and n > 1:
        dilations = dilations * n
    if len(dilations) != n:
        raise ValueError(f"{len(dilations)} dilations for {n} subsystems")
    if n == 1:
        return dilations[0]
    grid = dilations[0].grid
    if any(p.grid != grid for p in dilations):
        raise ValueError("dilations must share a grid")
    sys = [p.system_dim for p in dilations]
    anc = [p.ancilla_dim for p in dilations]
    total = int(np.prod(sys) * np.prod(anc))
    if total > max_dim:
        raise ValueError(f"composite dimension {total} exceeds the cap {max_dim}")
    dims = sys + anc
    m = len(grid)
    hams = np.zeros((m, total, total), dtype=complex)
    for i, p in enumerate(dilations):
        for t in range(m):
            hams[t] += embed(p.hamiltonians[t], dims, [i, n + i])
    # the unitaries commute, so their product is the tensor product in this ordering
    us = np.broadcast_to(np.eye(total, dtype=complex), (m, total, total)).copy()
    for i, p in enumerate(dilations):
        us = np.array([embed(p.unitaries[t], dims, [i, n + i]) for t in range(m)]) @ us
    return DilationPath(
        grid, int(np.prod(sys)), int(np.prod(anc)), unitaries=us, hamiltonians=hams,
        h_valid_from=max(p.h_valid_from for p in dilations),
    )
