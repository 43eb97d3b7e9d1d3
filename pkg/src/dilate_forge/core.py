"""Matrix algebra and channel representations.

Conventions used throughout the package:

* vectorization is column stacking, ``vec(A)[i + d*j] = A[i, j]``, so that
  ``vec(A X B) = (B.T kron A) vec(X)``;
* the Choi matrix is unnormalised, ``choi = (channel kron id)|Omega><Omega|``
  with ``|Omega> = sum_j |j j>``, output factor first, trace ``d``;
* bipartite operators are ordered system first, ancilla second, so the
  basis index of ``|a>_A |k>_B`` is ``a * dim_b + k``.

The Choi matrix is obtained from the superoperator by the index permutation::

    choi[a*d + i, b*d + j] = superop[a + d*b, i + d*j]
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_TOL = 1e-9

IDENTITY2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# |1> is the excited level: sigma_minus |1> = |0>.
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T


def kron(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product of one or more matrices, left to right."""
    out = np.asarray(ops[0])
    for op in ops[1:]:
        out = np.kron(out, np.asarray(op))
    return out


def dagger(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + dagger(m))


def partial_trace(m: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep``.

    ``m`` may carry leading batch axes; the last two axes are the operator.
    """
    m = np.asarray(m)
    dims = list(dims)
    n = len(dims)
    total = int(np.prod(dims))
    if m.shape[-2:] != (total, total):
        raise ValueError(f"operator shape {m.shape[-2:]} does not match dims {dims}")
    keep = sorted(keep)
    batch = m.shape[:-2]
    t = m.reshape(batch + tuple(dims) + tuple(dims))
    # traced subsystems share row/col labels
    letters = "abcdefghijklm"
    row = [letters[i] for i in range(n)]
    col = [letters[i] if i not in keep else letters[i].upper() for i in range(n)]
    out = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    t = np.einsum(f"...{''.join(row)}{''.join(col)}->...{out}", t)
    dk = int(np.prod([dims[i] for i in keep]))
    return t.reshape(batch + (dk, dk))


def partial_trace_ancilla(m: np.ndarray, dim_a: int, dim_b: int) -> np.ndarray:
    """Trace out the ancilla (second) factor of an operator on A kron B."""
    m = np.asarray(m)
    if m.shape[-2:] != (dim_a * dim_b, dim_a * dim_b):
        raise ValueError(
            f"operator of shape {m.shape[-2:]} is not on a {dim_a}x{dim_b} bipartite space"
        )
    t = m.reshape(m.shape[:-2] + (dim_a, dim_b, dim_a, dim_b))
    return np.einsum("...ikjk->...ij", t)


def vec(m: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization; works on batches of matrices."""
    m = np.asarray(m)
    return np.swapaxes(m, -1, -2).reshape(m.shape[:-2] + (-1,))


def unvec(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    d = _sqrt_dim(v.shape[-1])
    return np.swapaxes(v.reshape(v.shape[:-1] + (d, d)), -1, -2)


def _sqrt_dim(n: int) -> int:
    d = int(round(np.sqrt(n)))
    if d * d != n:
        raise ValueError(f"dimension {n} is not a perfect square")
    return d


def reshuffle(superop: np.ndarray) -> np.ndarray:
    """Superoperator matrix -> unnormalised Choi matrix (batched)."""
    s = np.asarray(superop)
    d = _sqrt_dim(s.shape[-1])
    s4 = s.reshape(s.shape[:-2] + (d, d, d, d))
    # s4[..., b, a, j, i] = superop[a + d*b, i + d*j]
    c4 = np.einsum("...bAji->...Aibj", s4)
    return c4.reshape(s.shape)


def unreshuffle(choi: np.ndarray) -> np.ndarray:
    """Inverse of :func:`reshuffle`."""
    c = np.asarray(choi)
    d = _sqrt_dim(c.shape[-1])
    c4 = c.reshape(c.shape[:-2] + (d, d, d, d))
    s4 = np.einsum("...Aibj->...bAji", c4)
    return s4.reshape(c.shape)


def kraus_to_superop(kraus: Sequence[np.ndarray]) -> np.ndarray:
    """Sum of ``conj(M) kron M``, the column-stacking superoperator."""
    kraus = np.asarray(kraus)
    if kraus.ndim == 2:
        kraus = kraus[None]
    return np.einsum("kij,kab->iajb", kraus.conj(), kraus).reshape(
        kraus.shape[1] ** 2, kraus.shape[2] ** 2
    )


def superop_to_choi(superop: np.ndarray) -> np.ndarray:
    return reshuffle(superop)


def choi_to_kraus(choi: np.ndarray, tol: float = DEFAULT_TOL) -> list:
    """Kraus operators from the eigendecomposition of a PSD Choi matrix.

    ``M_k[i, j] = sqrt(lambda_k) v_k[i*d + j]``; eigenvalues below ``tol`` are
    dropped and small negatives are treated as zero.
    """
    choi = hermitize(np.asarray(choi))
    d = _sqrt_dim(choi.shape[0])
    w, v = np.linalg.eigh(choi)
    ops = []
    for lam, vk in zip(w[::-1], v.T[::-1]):
        if lam <= tol:
            continue
        ops.append(np.sqrt(lam) * vk.reshape(d, d))
    return ops


def apply_superop(superop: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Apply a superoperator (or a batch of them) to a density matrix."""
    return unvec(np.asarray(superop) @ vec(rho))


def apply_kraus(kraus: Sequence[np.ndarray], rho: np.ndarray) -> np.ndarray:
    return sum(m @ rho @ m.conj().T for m in kraus)


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Half the trace norm of ``a - b``. Inputs are Hermitized first."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    w = np.linalg.eigvalsh(hermitize(a - b))
    return 0.5 * float(np.sum(np.abs(w)))


def operator_norm(a: np.ndarray) -> float:
    """Largest singular value."""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def is_density_matrix(rho: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        return False
    if abs(np.trace(rho) - 1) > tol:
        return False
    return bool(np.linalg.eigvalsh(hermitize(rho))[0] >= -tol)


@dataclass(frozen=True)
class CPTPReport:
    is_cp: bool
    is_tp: bool
    min_choi_eigenvalue: float
    tp_residual: float
    hermiticity_residual: float

    @property
    def is_cptp(self) -> bool:
        return self.is_cp and self.is_tp


def validate_cptp(superop: np.ndarray, tol: float = DEFAULT_TOL) -> CPTPReport:
    """Check complete positivity and trace preservation of a superoperator."""
    superop = np.asarray(superop)
    d = _sqrt_dim(superop.shape[0])
    choi = reshuffle(superop)
    herm_res = float(np.max(np.abs(choi - choi.conj().T)))
    min_eig = float(np.linalg.eigvalsh(hermitize(choi))[0])
    # trace over the output factor leaves the identity for a TP map
    reduced = partial_trace(choi, [d, d], keep=[1])
    tp_res = float(np.max(np.abs(reduced - np.eye(d))))
    return CPTPReport(
        is_cp=min_eig >= -tol and herm_res <= tol,
        is_tp=tp_res <= tol,
        min_choi_eigenvalue=min_eig,
        tp_residual=tp_res,
        hermiticity_residual=herm_res,
    )


def maximally_entangled(d: int) -> np.ndarray:
    """Unnormalised ``|Omega> = sum_j |j j>`` as a vector."""
    return np.eye(d, dtype=complex).reshape(-1)


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def projector(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def hermitian_basis(d: int) -> np.ndarray:
    """Orthonormal (Hilbert-Schmidt) basis of d x d Hermitian matrices."""
    basis = []
    for j in range(d):
        m = np.zeros((d, d), dtype=complex)
        m[j, j] = 1
        basis.append(m)
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = m[k, j] = 1 / np.sqrt(2)
            basis.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = -1j / np.sqrt(2)
            m[k, j] = 1j / np.sqrt(2)
            basis.append(m)
    return np.array(basis)


def commutator_superop(a: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> -i[a, rho]``."""
    a = np.asarray(a, dtype=complex)
    eye = np.eye(a.shape[0])
    return -1j * (np.kron(eye, a) - np.kron(a.T, eye))


def polar_unitary(m: np.ndarray) -> np.ndarray:
    """Closest unitary to ``m`` in Frobenius norm."""
    u, _, vh = np.linalg.svd(m)
    return u @ vh


def embed(op: np.ndarray, dims: Sequence[int], targets: Sequence[int]) -> np.ndarray:
    """Lift ``op`` acting on subsystems ``targets`` (in that order) to the full space."""
    dims = list(dims)
    n = len(dims)
    targets = list(targets)
    rest = [i for i in range(n) if i not in targets]
    d_rest = int(np.prod([dims[i] for i in rest])) if rest else 1
    full = np.kron(op, np.eye(d_rest))
    # full acts on order targets + rest; permute back to natural order
    order = targets + rest
    perm_dims = [dims[i] for i in order]
    t = full.reshape(perm_dims + perm_dims)
    inv = np.argsort(order)
    t = t.transpose(list(inv) + [n + i for i in inv])
    total = int(np.prod(dims))
    return t.reshape(total, total)
