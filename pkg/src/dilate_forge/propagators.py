"""RK4 integration of ``dU/dt = -i H(t) U`` for sampled or callable Hamiltonians."""
import logging
from typing import Callable, Optional, Union

import numpy as np

from .core import polar_unitary

logger = logging.getLogger(__name__)

HamiltonianSource = Union[Callable[[float], np.ndarray], np.ndarray]

# quintic Lagrange weights for the midpoint of the central interval of 6 nodes
_MID_CENTRAL6 = np.array([3.0, -25.0, 150.0, 150.0, -25.0, 3.0]) / 256.0
# cubic Lagrange weights for the midpoint of the second interval of 4 nodes
_MID_CENTRAL = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0
# midpoint of the first interval (between nodes 0 and 1) from nodes 0..3
_MID_FIRST = np.array([5.0, 15.0, -5.0, 1.0]) / 16.0


def midpoint_values(samples: np.ndarray) -> np.ndarray:
    """Interpolate a sampled path at the interval midpoints (quintic inside, cubic at the ends)."""
    samples = np.asarray(samples)
    n = len(samples)
    if n < 4:
        return 0.5 * (samples[1:] + samples[:-1])
    mid = np.empty((n - 1,) + samples.shape[1:], dtype=samples.dtype)
    w = _MID_CENTRAL
    mid[1:-1] = (w[0] * samples[:-3] + w[1] * samples[1:-2]
                 + w[2] * samples[2:-1] + w[3] * samples[3:])
    if n >= 6:
        w6 = _MID_CENTRAL6
        mid[2:-2] = sum(w6[j] * samples[j: n - 5 + j] for j in range(6))
    mid[0] = np.tensordot(_MID_FIRST, samples[:4], axes=1)
    mid[-1] = np.tensordot(_MID_FIRST, samples[::-1][:4], axes=1)
    return mid


class UnitaryIntegrator:
    """Fixed-step RK4 propagation with polar re-unitarization on drift."""

    def __init__(self, unitarity_tol: float = 1e-10):
        self.unitarity_tol = unitarity_tol
        self.reunitarizations = []

    def _maybe_project(self, u, index):
        drift = np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0])))
        if drift > self.unitarity_tol / 10:
            self.reunitarizations.append((index, float(drift)))
            logger.debug("re-unitarized at step %d (drift %.2e)", index, drift)
            return polar_unitary(u)
        return u

    def run(
        self,
        hamiltonian: HamiltonianSource,
        times: np.ndarray,
        u0: np.ndarray,
        start: int = 0,
        stop: Optional[int] = None,
    ) -> np.ndarray:
        """Propagate ``u0`` from ``times[start]`` to ``times[stop]``.

        ``hamiltonian`` is either a callable ``t -> H`` or an array sampled on
        ``times`` (midpoints are then interpolated). Returns the path on
        ``times[start:stop + 1]``.
        """
        stop = len(times) - 1 if stop is None else stop
        u = np.array(u0, dtype=complex)
        path = np.empty((stop - start + 1,) + u.shape, dtype=complex)
        path[0] = u
        if callable(hamiltonian):
            def h_at(n):
                return hamiltonian(times[n])

            def h_mid(n):
                return hamiltonian(0.5 * (times[n] + times[n + 1]))
        else:
            samples = np.asarray(hamiltonian)
            mids = midpoint_values(samples)

            def h_at(n):
                return samples[n]

            def h_mid(n):
                return mids[n]
        h_next = h_at(start)
        for n in range(start, stop):
            dt = times[n + 1] - times[n]
            h0, hm, h1 = h_next, h_mid(n), h_at(n + 1)
            k1 = -1j * h0 @ u
            k2 = -1j * hm @ (u + dt / 2 * k1)
            k3 = -1j * hm @ (u + dt / 2 * k2)
            k4 = -1j * h1 @ (u + dt * k3)
            u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            u = self._maybe_project(u, n + 1)
            path[n + 1 - start] = u
            h_next = h1
        return path


def evolve_unitary(hamiltonian: HamiltonianSource, times, u0, start=0, stop=None,
                   unitarity_tol: float = 1e-10):
    return UnitaryIntegrator(unitarity_tol).run(hamiltonian, np.asarray(times), u0, start, stop)


def sqrt_time_start(
    hamiltonian: Callable[[float], np.ndarray],
    t1: float,
    dim: int,
    n_steps: int = 2000,
) -> np.ndarray:
    """Propagator from ``t = 0`` to ``t1`` for an ``H(t) ~ t^(-1/2)`` singularity.

    Integrates in ``s = sqrt(t)`` where ``dU/ds = -2i s H(s^2) U`` is regular.
    """
    s = np.linspace(0.0, np.sqrt(t1), n_steps + 1)

    def h_s(si):
        if si == 0.0:
            # 2 s H(s^2) has a finite limit; evaluate just off zero
            si = s[1] * 1e-6
        return 2 * si * hamiltonian(si * si)

    path = evolve_unitary(h_s, s, np.eye(dim, dtype=complex))
    return path[-1]
