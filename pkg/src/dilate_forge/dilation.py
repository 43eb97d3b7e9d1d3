"""Channel family -> Choi path -> tracked eigenpairs -> Kraus family -> unitary -> Hamiltonian."""
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    commutator_superop,
    dagger,
    hermitian_basis,
    hermitize,
    reshuffle,
)
from .generators import ChannelFamily, LindbladSpec, TimeGrid, lindblad_superop, propagate_channel
from .propagators import evolve_unitary

logger = logging.getLogger(__name__)


class TrackingError(RuntimeError):
    """Kraus completeness lost; the eigenvector continuation failed."""


class GramSchmidtBreakdown(RuntimeError):
    def __init__(self, message, index=None, time=None):
        super().__init__(message)
        self.index = index
        self.time = time


class NotFactorableError(ValueError):
    """The Hamiltonian path is not of the form h(t) X."""


@dataclass(frozen=True)
class EigenTrack:
    grid: TimeGrid
    eigenvalues: np.ndarray  # (n_points, R), real
    eigenvectors: np.ndarray  # (n_points, d^2, R)
    crossings: Tuple[Tuple[int, int, int], ...] = ()  # (grid index, track a, track b)

    @property
    def rank(self) -> int:
        return self.eigenvalues.shape[1]

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.eigenvectors.shape[1])))


@dataclass(frozen=True)
class KrausFamily:
    grid: TimeGrid
    operators: np.ndarray  # (n_points, R, d, d)

    @property
    def rank(self) -> int:
        return self.operators.shape[1]

    @property
    def dim(self) -> int:
        return self.operators.shape[2]

    def completeness_residual(self) -> np.ndarray:
        m = self.operators
        s = np.einsum("nkji,nkjl->nil", m.conj(), m)
        return np.max(np.abs(s - np.eye(self.dim)), axis=(1, 2))


@dataclass(frozen=True)
class DilationPath:
    """Unitary and Hamiltonian on system (dim ``d``) kron ancilla (dim ``R``).

    The ancilla starts in ``|0><0|``. ``hamiltonians`` is ``None`` until
    :func:`hamiltonian_from_unitary` has run; entries before ``h_valid_from``
    are not meaningful (divergent start).
    """

    grid: TimeGrid
    system_dim: int
    ancilla_dim: int
    unitaries: Optional[np.ndarray] = None
    hamiltonians: Optional[np.ndarray] = None
    h_valid_from: int = 0
    antihermitian_residual: Optional[np.ndarray] = None
    nonsmooth_indices: Tuple[int, ...] = ()
    step_norms: Optional[np.ndarray] = None  # completion-column change per step

    @property
    def total_dim(self) -> int:
        return self.system_dim * self.ancilla_dim

    def kraus(self, index: int) -> np.ndarray:
        """Kraus operators read off the ancilla-|0> input columns."""
        return kraus_from_unitary(self.unitaries[index], self.system_dim, self.ancilla_dim)


def kraus_from_unitary(u: np.ndarray, d: int, r: int) -> np.ndarray:
    """``M_k = <k_B| U |0_B>`` for one unitary or a batch."""
    t = np.asarray(u).reshape(u.shape[:-2] + (d, r, d, r))
    return np.moveaxis(t[..., :, :, :, 0], -2, -3)


def choi_path(family: ChannelFamily) -> np.ndarray:
    """Choi matrix at every grid point, shape ``(n_points, d^2, d^2)``."""
    return reshuffle(family.superops)


# --- eigenvector continuation ---------------------------------------------

def _clusters(values: np.ndarray, tol: float) -> List[List[int]]:
    """Group indices of (any order) eigenvalues whose gaps are below ``tol``."""
    order = np.argsort(values)[::-1]
    groups = [[int(order[0])]]
    for a, b in zip(order[:-1], order[1:]):
        if abs(values[a] - values[b]) <= tol:
            groups[-1].append(int(b))
        else:
            groups.append([int(b)])
    return groups


def _polar(m):
    u, _, vh = np.linalg.svd(m)
    return u @ vh


def _fix_initial_phase(v: np.ndarray) -> np.ndarray:
    mags = np.round(np.abs(v), 10)
    idx = np.argmax(mags, axis=0)
    ph = v[idx, np.arange(v.shape[1])]
    return v * (np.abs(ph) / ph)[None, :]


def eigentrack(
    chois: np.ndarray,
    grid: TimeGrid,
    rank: Union[None, int, str] = None,
    threshold: Optional[float] = None,
    degeneracy_tol: float = 1e-8,
) -> EigenTrack:
    """Continuous eigenpairs of a Hermitian matrix path.

    Tracks are matched step to step by greedy maximum overlap; eigenvectors
    inside (near-)degenerate clusters are rotated to align with the previous
    step. The phase of every track is fixed so that successive overlaps are
    real and positive.

    ``rank``: ``None`` keeps every track whose eigenvalue exceeds
    ``threshold`` (default ``1e-12 * d``) somewhere in the window; an integer
    keeps that many tracks (largest maxima); ``"all"`` keeps every track.
    """
    chois = hermitize(np.asarray(chois))
    n_pts, n, _ = chois.shape
    d = int(round(np.sqrt(n)))
    threshold = 1e-12 * d if threshold is None else threshold
    w_all, v_all = np.linalg.eigh(chois)

    lam = np.empty((n_pts, n))
    vecs = np.empty((n_pts, n, n), dtype=complex)
    crossings = []

    # initial point: descending order, degenerate clusters aligned with the next point
    w0, v0 = w_all[0][::-1], v_all[0][:, ::-1]
    if n_pts > 1:
        v1 = v_all[1][:, ::-1]
        for group in _clusters(w0, degeneracy_tol):
            if len(group) < 2:
                continue
            vc = v0[:, group]
            proj = np.linalg.norm(dagger(vc) @ v1, axis=0)
            sel = np.sort(np.argsort(-proj, kind="stable")[: len(group)])
            v0[:, group] = vc @ _polar(dagger(vc) @ v1[:, sel])
    lam[0] = w0
    vecs[0] = _fix_initial_phase(v0)

    for i in range(1, n_pts):
        prev = vecs[i - 1]
        w, v = w_all[i], v_all[i]
        units = _clusters(w, degeneracy_tol)
        scores = np.array([np.linalg.norm(dagger(v[:, u]) @ prev, axis=0) for u in units])
        capacity = [len(u) for u in units]
        assigned = {j: [] for j in range(len(units))}
        s = scores.copy()
        for _ in range(n):
            ui, k = np.unravel_index(np.argmax(s), s.shape)
            if capacity[ui] == 1:
                row = s[ui].copy()
                row[k] = -np.inf
                other = int(np.argmax(row))
                if np.isfinite(row[other]) and s[ui, k] - row[other] < degeneracy_tol:
                    crossings.append((i, int(k), other))
            assigned[ui].append(int(k))
            s[:, k] = -np.inf
            capacity[ui] -= 1
            if capacity[ui] == 0:
                s[ui, :] = -np.inf
        new = np.empty_like(prev)
        new_lam = np.empty(n)
        for ui, unit in enumerate(units):
            tracks = assigned[ui]
            vc = v[:, unit]
            if len(unit) == 1:
                new[:, tracks[0]] = vc[:, 0]
                new_lam[tracks[0]] = w[unit[0]]
            else:
                aligned = vc @ _polar(dagger(vc) @ prev[:, tracks])
                new[:, tracks] = aligned
                new_lam[tracks] = np.real(
                    np.einsum("ik,ij,jk->k", aligned.conj(), chois[i], aligned))
        ov = np.einsum("ik,ik->k", prev.conj(), new)
        new = new * (np.abs(ov) / np.where(ov == 0, 1, ov))[None, :]
        vecs[i] = new
        lam[i] = new_lam

    if rank == "all":
        keep = np.arange(n)
    elif rank is None:
        keep = np.flatnonzero(lam.max(axis=0) > threshold)
    else:
        order = np.argsort(-lam.max(axis=0), kind="stable")[: int(rank)]
        keep = np.sort(order)
    if len(keep) == 0:
        keep = np.array([0])
    idx = {int(k): j for j, k in enumerate(keep)}
    kept_crossings = tuple(
        (c[0], idx[c[1]], idx.get(c[2], -1)) for c in crossings if c[1] in idx)
    return EigenTrack(grid, lam[:, keep], vecs[:, :, keep], kept_crossings)


def kraus_from_eigentrack(track: EigenTrack, completeness_tol: float = 1e-8) -> KrausFamily:
    """``M_k[i, j] = sqrt(lambda_k) v_k[i*d + j]``; tiny negative eigenvalues clamp to 0."""
    d = track.dim
    lam = np.clip(track.eigenvalues, 0.0, None)
    v = track.eigenvectors  # (n, d^2, R)
    ops = np.sqrt(lam)[:, :, None, None] * np.moveaxis(v, 2, 1).reshape(
        v.shape[0], v.shape[2], d, d)
    fam = KrausFamily(track.grid, ops)
    res = fam.completeness_residual()
    bad = np.flatnonzero(res > completeness_tol)
    if len(bad):
        n = int(bad[0])
        raise TrackingError(
            f"Kraus completeness residual {res[n]:.3e} at grid index {n} "
            f"(t={track.grid.times[n]:.6g})")
    return fam


# --- unitary completion -----------------------------------------------------

def complete_unitary(
    kraus: KrausFamily,
    seed_basis: Optional[np.ndarray] = None,
    breakdown_floor: float = 1e-6,
) -> DilationPath:
    """Unitary dilation with continuously varying completion columns.

    Columns ``|b>|0>`` hold the Kraus operators. At the first grid point the
    remaining columns come from Gram-Schmidt over ``seed_basis`` (canonical by
    default); afterwards each step re-orthonormalizes the previous completion
    columns, in order, against the updated constrained columns.
    """
    ops = kraus.operators
    n_pts, r, d, _ = ops.shape
    dim = r * d
    constrained = np.arange(d) * r
    free = np.array([j for j in range(dim) if j % r != 0], dtype=int)
    # constrained column b: entries (a, k) = M_k[a, b]
    cols = np.moveaxis(ops, 1, 2).reshape(n_pts, dim, d)  # rows a*r + k

    seeds = np.eye(dim, dtype=complex) if seed_basis is None else np.asarray(seed_basis, complex)
    u = np.empty((n_pts, dim, dim), dtype=complex)
    step_norms = np.zeros(n_pts)

    # initial Gram-Schmidt from the seed basis, preferring seed j for slot j
    basis = [cols[0][:, b] for b in range(d)]
    completion = []
    order = list(free) + [j for j in range(dim) if j not in set(free)]
    used = set()
    for slot in free:
        for cand in [slot] + [j for j in order if j != slot]:
            if cand in used:
                continue
            vec = seeds[:, cand].copy()
            for _ in range(2):
                for q in basis:
                    vec = vec - q * np.vdot(q, vec)
            nrm = np.linalg.norm(vec)
            if nrm > 1e-3:
                used.add(cand)
                vec = vec / nrm
                basis.append(vec)
                completion.append(vec)
                break
        else:
            raise GramSchmidtBreakdown("seed basis does not span the completion space", 0,
                                       float(kraus.grid.times[0]))
    w = np.array(completion, dtype=complex).reshape(len(free), dim).T  # (dim, dim - d)
    u[0][:, constrained] = cols[0]
    u[0][:, free] = w

    times = kraus.grid.times
    for i in range(1, n_pts):
        block = np.concatenate([cols[i], w], axis=1)
        q, rr = np.linalg.qr(block)
        diag = np.diagonal(rr)
        if len(free) and np.min(np.abs(diag[d:])) < breakdown_floor:
            raise GramSchmidtBreakdown(
                f"completion column norm {np.min(np.abs(diag[d:])):.2e} below floor at grid "
                f"index {i} (t={times[i]:.6g}); refine the grid or check for a rank drop",
                i, float(times[i]))
        q = q * (diag / np.abs(diag))[None, :]
        w_new = q[:, d:]
        step_norms[i] = np.max(np.linalg.norm(w_new - w, axis=0), initial=0.0)
        w = w_new
        u[i][:, constrained] = cols[i]
        u[i][:, free] = w
    return DilationPath(kraus.grid, d, r, unitaries=u, step_norms=step_norms)


# --- Hamiltonian ------------------------------------------------------------

def fd_weights(offsets: Sequence[int]) -> np.ndarray:
    """First-derivative finite-difference weights at 0 for integer offsets."""
    x = np.asarray(offsets, dtype=float)
    m = len(x)
    a = np.vander(x, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[1] = 1.0
    return np.linalg.solve(a, rhs)


def finite_difference(samples: np.ndarray, dt: float, order: int = 4) -> np.ndarray:
    """Time derivative of a uniformly sampled path, central in the interior.

    ``order`` is the (even) accuracy order; the ends use one-sided stencils of
    the same order.
    """
    samples = np.asarray(samples)
    n = len(samples)
    half = order // 2
    width = order + 1
    if n < width:
        raise ValueError(f"need at least {width} samples for order {order}")
    out = np.empty_like(samples)
    wc = fd_weights(range(-half, half + 1))
    acc = 0
    for j, c in enumerate(wc):
        acc = acc + c * samples[j: n - 2 * half + j]
    out[half: n - half] = acc
    for i in list(range(half)) + list(range(n - half, n)):
        lo = min(max(i - half, 0), n - width)
        offs = np.arange(lo, lo + width) - i
        wts = fd_weights(offs)
        out[i] = np.tensordot(wts, samples[lo: lo + width], axes=1)
    return out / dt


def hamiltonian_from_unitary(
    path: DilationPath,
    fd_order: int = 6,
    residual_tol: float = 1e-6,
    h_valid_from: int = 0,
) -> DilationPath:
    """``H = i dU/dt U^dag`` by finite differences, then Hermitized.

    The anti-Hermitian part before Hermitization is kept per point; points
    where it exceeds ``residual_tol * max(1, |H|)`` are flagged as non-smooth.
    """
    u = path.unitaries
    du = finite_difference(u, path.grid.dt, fd_order)
    h_raw = 1j * du @ dagger(u)
    anti = 0.5 * (h_raw - dagger(h_raw))
    h = hermitize(h_raw)
    anti_norm = np.linalg.norm(anti, ord=2, axis=(1, 2))
    h_norm = np.linalg.norm(h, ord=2, axis=(1, 2))
    flagged = np.flatnonzero(anti_norm > residual_tol * np.maximum(1.0, h_norm))
    flagged = tuple(int(i) for i in flagged if i >= h_valid_from)
    return replace(path, hamiltonians=h, antihermitian_residual=anti_norm,
                   nonsmooth_indices=flagged, h_valid_from=h_valid_from)


# --- full pipeline ----------------------------------------------------------

@dataclass(frozen=True)
class DilationResult:
    """Intermediate objects of one pipeline run."""

    family: ChannelFamily
    track: EigenTrack
    kraus: KrausFamily
    path: DilationPath


def dilate(
    source: Union[ChannelFamily, LindbladSpec],
    grid: Optional[TimeGrid] = None,
    rank=None,
    seed_basis=None,
    fd_order: int = 6,
    degeneracy_tol: float = 1e-8,
    singular_start: Optional[bool] = None,
    full: bool = False,
):
    """Run the whole construction on a channel family or a Lindbladian.

    ``singular_start``: mark ``H`` at the first grid point as invalid. When
    ``None`` it is set from the generator test of :func:`diagnose`.
    """
    if isinstance(source, LindbladSpec):
        if grid is None:
            raise ValueError("a grid is required when dilating a Lindbladian")
        family = propagate_channel(source, grid)
        l0 = lindblad_superop(source, grid.t_start)
    else:
        family = source
        l0 = _generator_at_start(family)
    if singular_start is None:
        singular_start = dissipative_norm(l0) > _default_rate_tol(family)
    track = eigentrack(choi_path(family), family.grid, rank=rank, degeneracy_tol=degeneracy_tol)
    kraus = kraus_from_eigentrack(track)
    path = complete_unitary(kraus, seed_basis)
    path = hamiltonian_from_unitary(path, fd_order, h_valid_from=1 if singular_start else 0)
    if full:
        return DilationResult(family, track, kraus, path)
    return path


# --- divergence diagnosis ---------------------------------------------------

@dataclass(frozen=True)
class DivergenceReport:
    diverges_at_zero: bool
    eigenvalue_test: bool
    generator_test: bool
    zero_time_evidence: Tuple[dict, ...]
    dissipative_generator_norm_at_zero: float
    rank_drop_times: Tuple[Tuple[float, int], ...]
    max_H_norm_observed: float
    consistent: bool
    needs_review: bool
    # largest |H(t_{n+1}) - H(t_n)| within two steps of each rank drop; nan without H
    rank_drop_jumps: Tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "diverges_at_zero": self.diverges_at_zero,
            "eigenvalue_test": self.eigenvalue_test,
            "generator_test": self.generator_test,
            "zero_time_evidence": list(self.zero_time_evidence),
            "dissipative_generator_norm_at_zero": self.dissipative_generator_norm_at_zero,
            "rank_drop_times": [list(x) for x in self.rank_drop_times],
            "max_H_norm_observed": self.max_H_norm_observed,
            "consistent": self.consistent,
            "needs_review": self.needs_review,
            "rank_drop_jumps": list(self.rank_drop_jumps),
        }


def dissipative_norm(generator: np.ndarray) -> float:
    """Frobenius distance of a generator from the maps ``rho -> -i[A, rho]``."""
    generator = np.asarray(generator)
    d = int(round(np.sqrt(generator.shape[0])))
    cols = np.array([commutator_superop(b).reshape(-1) for b in hermitian_basis(d)]).T
    target = generator.reshape(-1)
    a = np.concatenate([cols.real, cols.imag])
    b = np.concatenate([target.real, target.imag])
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    return float(np.linalg.norm(b - a @ coef))


def _generator_at_start(family: ChannelFamily) -> np.ndarray:
    s = family.superops
    return (-3 * s[0] + 4 * s[1] - s[2]) / (2 * family.grid.dt)


def _default_rate_tol(family: ChannelFamily) -> float:
    g = family.grid
    return 1e-3 * family.dim / (g.t_end - g.t_start)


def find_rank_drops(track: EigenTrack, threshold: Optional[float] = None):
    """Interior grid points where a retained eigenvalue touches zero.

    Uses ``s = sqrt(lambda)``: a zero touching between samples shows up as a
    local minimum of ``s`` smaller than one step of its slope.
    """
    threshold = 1e-9 * track.dim if threshold is None else threshold
    s = np.sqrt(np.clip(track.eigenvalues, 0, None))
    ts = track.grid.times
    drops = []
    for k in range(s.shape[1]):
        sk = s[:, k]
        if sk.max() ** 2 <= threshold:
            continue
        for n in range(1, len(sk) - 1):
            if not (sk[n] <= sk[n - 1] and sk[n] <= sk[n + 1]):
                continue
            left, right = sk[n - 1] - sk[n], sk[n + 1] - sk[n]
            if sk[n] <= max(left, right) and max(left, right) > 0:
                # V-shaped zero: place it by linear extrapolation of the steeper side
                slope = max(left, right) / track.grid.dt
                shift = sk[n] / slope if slope > 0 else 0.0
                t_star = ts[n] + (shift if right < left else -shift)
                drops.append((float(t_star), k, float(track.eigenvalues[n, k])))
    return drops


def diagnose(
    source: Union[ChannelFamily, LindbladSpec],
    grid: Optional[TimeGrid] = None,
    rate_tol: Optional[float] = None,
    zero_tol: Optional[float] = None,
    with_hamiltonian: bool = True,
) -> DivergenceReport:
    """Divergence of the dilation Hamiltonian at t=0 and rank-drop scan.

    Two independent tests: (a) an eigenvalue of the Choi path starts at zero
    with non-zero slope; (b) the generator at zero has a non-Hamiltonian part.
    """
    if isinstance(source, LindbladSpec):
        family = propagate_channel(source, grid, validate=False)
        l0 = lindblad_superop(source, grid.t_start)
    else:
        family = source
        l0 = _generator_at_start(family)
    d = family.dim
    rate_tol = _default_rate_tol(family) if rate_tol is None else rate_tol
    zero_tol = 1e-9 * d if zero_tol is None else zero_tol
    dt = family.grid.dt

    track = eigentrack(choi_path(family), family.grid, rank="all")
    lam = track.eigenvalues
    evidence = []
    eig_diverges = False
    for k in range(lam.shape[1]):
        if abs(lam[0, k]) > zero_tol:
            continue
        slope = (-3 * lam[0, k] + 4 * lam[1, k] - lam[2, k]) / (2 * dt)
        if abs(slope) > rate_tol:
            eig_diverges = True
        evidence.append({"index": k, "lambda0": float(lam[0, k]), "lambda_dot0": float(slope)})

    diss = dissipative_norm(l0)
    gen_diverges = diss > rate_tol
    retained = eigentrack(choi_path(family), family.grid)
    drops = tuple((t, k) for t, k, _ in find_rank_drops(retained))

    h_max = float("nan")
    jumps = tuple(float("nan") for _ in drops)
    if with_hamiltonian:
        try:
            path = dilate(family, singular_start=gen_diverges)
            hs = path.hamiltonians[path.h_valid_from:]
            h_max = float(np.max(np.linalg.norm(hs, ord=2, axis=(1, 2))))
            steps = np.linalg.norm(np.diff(path.hamiltonians, axis=0), ord=2, axis=(1, 2))
            jumps = tuple(_jump_near(steps, family.grid.index_of(t)) for t, _ in drops)
        except (TrackingError, GramSchmidtBreakdown) as exc:
            logger.warning("dilation failed during diagnosis: %s", exc)
    consistent = eig_diverges == gen_diverges
    return DivergenceReport(
        diverges_at_zero=gen_diverges,
        eigenvalue_test=eig_diverges,
        generator_test=gen_diverges,
        zero_time_evidence=tuple(evidence),
        dissipative_generator_norm_at_zero=diss,
        rank_drop_times=drops,
        max_H_norm_observed=h_max,
        consistent=consistent,
        needs_review=not consistent,
        rank_drop_jumps=jumps,
    )


def _jump_near(steps: np.ndarray, index: int, width: int = 2) -> float:
    lo, hi = max(index - width, 0), min(index + width, len(steps))
    return float(np.max(steps[lo:hi])) if hi > lo else float("nan")


# --- bounded cutoff -----------------------------------------------------------

@dataclass(frozen=True)
class CutoffPolicy:
    c: float
    mode: str = "prefactor_clamp"

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("cutoff must be positive")
        if self.mode not in ("prefactor_clamp", "norm_clamp"):
            raise ValueError(f"unknown cutoff mode {self.mode!r}")


def factor_residual(hamiltonians: np.ndarray, valid_from: int = 0):
    """Best ``h(t) X`` fit with ``|X| = 1`` and the pointwise residual norm.

    ``X`` is the normalised Hamiltonian at its largest norm; ``h`` is the
    Hilbert-Schmidt projection onto it. Returns ``(h, X, residual, norms)``
    over the valid points.
    """
    hs = np.asarray(hamiltonians)[valid_from:]
    norms = np.linalg.norm(hs, ord=2, axis=(1, 2))
    ref = int(np.argmax(norms))
    if norms[ref] == 0:
        raise NotFactorableError("Hamiltonian path is identically zero")
    x = hs[ref] / norms[ref]
    h = np.real(np.einsum("ij,nij->n", x.conj(), hs)) / np.real(np.vdot(x, x))
    resid = np.linalg.norm(hs - h[:, None, None] * x, ord=2, axis=(1, 2))
    return h, x, resid, norms


def factorize(hamiltonians: np.ndarray, valid_from: int = 0, tol: float = 1e-6,
              atol: float = 1e-7):
    """Split a Hamiltonian path as ``h(t) X`` with ``|X| = 1``.

    Raises :class:`NotFactorableError` when ``|H - h X| > tol |H| + atol``
    anywhere. The absolute floor absorbs finite-difference noise where Choi
    eigenvalues draw together and eigenvectors are poorly conditioned.
    Returns ``h`` on the full grid (nan before ``valid_from``) and ``X``.
    """
    h, x, resid, norms = factor_residual(hamiltonians, valid_from)
    bad = np.flatnonzero(resid > tol * norms + atol)
    if len(bad):
        raise NotFactorableError(
            f"H(t) is not h(t) X: relative residual {resid[bad[0]] / norms[bad[0]]:.2e} "
            f"at grid index {bad[0] + valid_from}")
    full = np.full(len(hamiltonians), np.nan)
    full[valid_from:] = h
    return full, x


def clamp_window_end(prefactor, c: float, t_lo: float, t_hi: float, xtol: float = 1e-12) -> float:
    """Bisection for ``prefactor(t) = c`` with a monotone decreasing prefactor."""
    from scipy.optimize import bisect

    return float(bisect(lambda t: prefactor(t) - c, t_lo, t_hi, xtol=xtol, maxiter=400))


@dataclass(frozen=True)
class CutoffResult:
    path: DilationPath
    clamped: np.ndarray  # boolean mask over the grid
    window: Tuple[float, float]  # (first, last) clamped grid times; nan if none


def apply_cutoff(path: DilationPath, policy: CutoffPolicy) -> CutoffResult:
    """Bounded replacement of the Hamiltonian where it exceeds the cap.

    Grid points before ``h_valid_from`` are treated as unbounded and clamped.
    The returned path carries the unitary obtained by integrating the clamped
    Hamiltonian from the first grid point.
    """
    h = path.hamiltonians.copy()
    v0 = path.h_valid_from
    n = len(h)
    if policy.mode == "prefactor_clamp":
        pref, x = factorize(h, v0)
        big = np.zeros(n, dtype=bool)
        big[:v0] = True
        big[v0:] = np.abs(pref[v0:]) > policy.c
        sign = np.where(np.isnan(pref), 1.0, np.sign(pref))
        new = h.copy()
        new[big] = (sign[big] * policy.c)[:, None, None] * x
    else:
        norms = np.linalg.norm(h, ord=2, axis=(1, 2))
        big = np.zeros(n, dtype=bool)
        big[:v0] = True
        big[v0:] = norms[v0:] > policy.c
        new = h.copy()
        scale = np.where(big[v0:], policy.c / np.where(norms[v0:] == 0, 1, norms[v0:]), 1.0)
        new[v0:] = h[v0:] * scale[:, None, None]
        if v0:
            # no usable direction at the singular points: reuse the first valid one
            new[:v0] = new[v0]
    ts = path.grid.times
    u0 = path.unitaries[0] if path.unitaries is not None else np.eye(path.total_dim)
    u = evolve_unitary(new, ts, u0)
    window = (float(ts[big][0]), float(ts[big][-1])) if big.any() else (float("nan"),) * 2
    out = replace(path, unitaries=u, hamiltonians=new, h_valid_from=0,
                  antihermitian_residual=None, nonsmooth_indices=())
    return CutoffResult(out, big, window)
