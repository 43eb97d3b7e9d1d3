"""scikit-learn style wrapper: fit a dilation, transform initial states into trajectories."""
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import hermitize
from .dilation import CutoffPolicy, apply_cutoff, dilate
from .generators import ChannelFamily, LindbladSpec, TimeGrid, propagate_channel
from .simulate import evolve_dilated


def check_density_matrices(x, dim: Optional[int] = None, tol: float = 1e-8) -> np.ndarray:
    """Validate one density matrix or a batch; returns a complex ``(m, d, d)`` array."""
    arr = np.asarray(x)
    if arr.dtype == object or not np.issubdtype(arr.dtype, np.number):
        raise TypeError("density matrices must be numeric arrays")
    arr = arr.astype(complex)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"expected (d, d) or (m, d, d) states, got shape {np.shape(x)}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"states have dimension {arr.shape[1]}, the fitted channel has {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("states contain non-finite entries")
    for i, rho in enumerate(arr):
        if np.max(np.abs(rho - rho.conj().T)) > tol:
            raise ValueError(f"state {i} is not Hermitian")
        if abs(np.trace(rho) - 1) > tol:
            raise ValueError(f"state {i} has trace {np.trace(rho).real:.6g}, expected 1")
        if np.linalg.eigvalsh(hermitize(rho))[0] < -tol:
            raise ValueError(f"state {i} is not positive semidefinite")
    return arr


def check_channel_source(x):
    if not isinstance(x, (LindbladSpec, ChannelFamily)):
        raise TypeError(f"expected a LindbladSpec or ChannelFamily, got {type(x).__name__}")
    return x


class DilationEstimator(TransformerMixin, BaseEstimator):
    """Builds a dilation in ``fit`` and simulates it in ``transform``.

    ``fit`` takes a :class:`LindbladSpec` (propagated on the grid given by
    ``t_start``, ``t_end``, ``n_steps``) or a precomputed :class:`ChannelFamily`.
    ``transform`` maps density matrices ``(m, d, d)`` to reduced trajectories
    ``(m, n_points, d, d)`` on the simulation window.

    The window starts at ``sim_start`` (snapped to the grid) or, by default,
    at the first grid point with a finite Hamiltonian. A ``cutoff`` bounds a
    divergent Hamiltonian so that the window may start at the first point.
    """

    def __init__(self, t_start=0.0, t_end=5.0, n_steps=5000, rank=None, fd_order=6,
                 degeneracy_tol=1e-8, seed_basis=None, cutoff=None,
                 cutoff_mode="prefactor_clamp", sim_start=None, state_tol=1e-8):
        self.t_start = t_start
        self.t_end = t_end
        self.n_steps = n_steps
        self.rank = rank
        self.fd_order = fd_order
        self.degeneracy_tol = degeneracy_tol
        self.seed_basis = seed_basis
        self.cutoff = cutoff
        self.cutoff_mode = cutoff_mode
        self.sim_start = sim_start
        self.state_tol = state_tol

    def _validate_params(self):
        if self.fd_order not in (2, 4, 6, 8):
            raise ValueError(f"fd_order must be 2, 4, 6 or 8, got {self.fd_order!r}")
        if self.cutoff is not None and not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        if not self.degeneracy_tol > 0:
            raise ValueError("degeneracy_tol must be positive")

    def fit(self, X, y=None):
        self._validate_params()
        source = check_channel_source(X)
        if isinstance(source, LindbladSpec):
            grid = TimeGrid(float(self.t_start), float(self.t_end), int(self.n_steps))
            family = propagate_channel(source, grid)
        else:
            family = source
        path = dilate(family, rank=self.rank, seed_basis=self.seed_basis,
                      fd_order=self.fd_order, degeneracy_tol=self.degeneracy_tol)
        self.clamped_ = None
        if self.cutoff is not None:
            res = apply_cutoff(path, CutoffPolicy(self.cutoff, self.cutoff_mode))
            path, self.clamped_ = res.path, res.clamped
        self.path_ = path
        self.grid_ = family.grid
        self.n_features_in_ = family.dim
        self.rank_ = path.ancilla_dim
        self.singular_start_ = path.h_valid_from > 0
        if self.sim_start is None:
            self.start_index_ = path.h_valid_from
        else:
            self.start_index_ = self.grid_.index_of(self.sim_start)
        return self

    @property
    def hamiltonians_(self) -> np.ndarray:
        check_is_fitted(self, "path_")
        return self.path_.hamiltonians

    @property
    def window_(self) -> TimeGrid:
        check_is_fitted(self, "path_")
        return self.grid_.window(self.start_index_)

    def transform(self, X):
        check_is_fitted(self, "path_")
        states = check_density_matrices(X, self.n_features_in_, self.state_tol)
        sim = evolve_dilated(self.path_, states, self.window_)
        return sim.reduced
