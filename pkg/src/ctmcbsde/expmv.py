"""phi-functions of matrices and their Krylov-projected actions on vectors.

``phi_0(A) = exp(A)`` and ``phi_l(A) = int_0^1 exp((1-s)A) s^(l-1)/(l-1)! ds``
for ``l >= 1``.  Dense evaluation exponentiates an augmented block matrix so
that one scaling-and-squaring Pade call yields ``phi_0 .. phi_l`` together.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

__all__ = [
    "PhiCombination",
    "phi",
    "KrylovWorkspace",
    "phi_dense",
    "phi_dense_all",
    "phi_vectors_dense",
    "arnoldi",
    "phi_combination_action",
]

MAX_PHI_INDEX = 8


@dataclass(frozen=True)
class PhiCombination:
    """``sum_k w_k phi_{l_k}(gamma_k z)`` stored as ``(w, l, gamma)`` terms.

    ``gamma = 0`` is allowed and yields the constant ``w / l!`` (so the
    identity map is ``phi(0, 0.0)``).
    """

    terms: tuple = ()

    def __post_init__(self):
        merged = {}
        for w, l, g in self.terms:
            if int(l) != l or not 0 <= l <= MAX_PHI_INDEX:
                raise ValueError(f"phi index must be in [0, {MAX_PHI_INDEX}], got {l}")
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"node scale must be in [0, 1], got {g}")
            key = (int(l), float(g))
            merged[key] = merged.get(key, 0.0) + float(w)
        clean = tuple((w, l, g) for (l, g), w in merged.items() if w != 0)
        object.__setattr__(self, "terms", clean)

    def __add__(self, other: "PhiCombination") -> "PhiCombination":
        return PhiCombination(self.terms + other.terms)

    def __sub__(self, other: "PhiCombination") -> "PhiCombination":
        return self + (-1.0) * other

    def __mul__(self, c: float) -> "PhiCombination":
        return PhiCombination(tuple((c * w, l, g) for w, l, g in self.terms))

    __rmul__ = __mul__

    def __neg__(self) -> "PhiCombination":
        return (-1.0) * self

    def __bool__(self) -> bool:
        return bool(self.terms)

    @property
    def max_index(self) -> int:
        return max((l for _, l, _ in self.terms), default=0)

    def scalar(self, z: complex) -> complex:
        """Evaluate at a scalar argument (reference implementation for tests)."""
        return sum(w * phi_dense(l, np.array([[g * z]]))[0, 0] for w, l, g in self.terms)


def phi(l: int, gamma: float = 1.0, weight: float = 1.0) -> PhiCombination:
    return PhiCombination(((weight, l, gamma),))


def _augmented(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    """``[[a, b, 0], [0, 0, I_{p-1}], [0, 0, 0]]`` for ``p >= 1``.

    With ``b`` of shape ``(n, k)`` the top-right blocks of its exponential
    are ``phi_1(a) b, ..., phi_p(a) b``.
    """
    n, k = b.shape
    size = n + k * p
    m = np.zeros((size, size))
    m[:n, :n] = a
    m[:n, n:n + k] = b
    for j in range(p - 1):
        r = n + j * k
        m[r:r + k, r + k:r + 2 * k] = np.eye(k)
    return m


def phi_dense_all(l: int, a) -> list:
    """``[phi_0(a), ..., phi_l(a)]`` for a small dense square matrix."""
    if int(l) != l or l < 0:
        raise ValueError(f"phi index must be a non-negative integer, got {l}")
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError("phi_dense needs a square matrix")
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("non-finite entries in matrix")
    n = a.shape[0]
    if l == 0:
        return [scipy.linalg.expm(a)]
    e = scipy.linalg.expm(_augmented(a, np.eye(n), l))
    return [e[:n, :n]] + [e[:n, n + j * n:n + (j + 1) * n] for j in range(l)]


def phi_dense(l: int, a) -> np.ndarray:
    return phi_dense_all(l, a)[-1]


def phi_vectors_dense(a: np.ndarray, v: np.ndarray, p: int) -> np.ndarray:
    """Columns ``phi_0(a) v, ..., phi_p(a) v`` via one augmented exponential."""
    n = a.shape[0]
    if p == 0:
        return (scipy.linalg.expm(a) @ v)[:, None]
    e = scipy.linalg.expm(_augmented(a, v.reshape(n, 1), p))
    out = np.empty((n, p + 1))
    out[:, 0] = e[:n, :n] @ v
    out[:, 1:] = e[:n, n:n + p]
    return out


@dataclass
class KrylovWorkspace:
    """Arnoldi relation ``A V[:, :k] = V[:, :k+1] H`` with ``H`` of shape ``(k+1, k)``.

    ``breakdown`` marks an invariant subspace (then ``H[k, k-1] == 0`` and the
    projected ``phi`` actions are exact).
    """

    basis: np.ndarray
    hessenberg: np.ndarray
    beta: float
    breakdown: bool

    @property
    def size(self) -> int:
        return self.hessenberg.shape[1]


def _matvec(a):
    if sp.issparse(a) or isinstance(a, np.ndarray):
        return lambda x: a @ x
    return a.matvec


def arnoldi(a, v: np.ndarray, m: int, reorth_tol: float = 1e-8) -> KrylovWorkspace:
    """Arnoldi iteration with classical Gram-Schmidt and selective re-orthogonalization."""
    v = np.asarray(v, dtype=float)
    beta = float(np.linalg.norm(v))
    if beta == 0.0:
        raise ValueError("Arnoldi needs a nonzero starting vector")
    if m < 1:
        raise ValueError("Krylov dimension must be >= 1")
    n = v.size
    m = min(m, n)
    mv = _matvec(a)
    V = np.empty((m + 1, n))  # rows are basis vectors
    H = np.zeros((m + 1, m))
    V[0] = v / beta
    breakdown_tol = 1e-14 * beta
    k = m
    broke = False
    for j in range(m):
        w = mv(V[j])
        if not np.all(np.isfinite(w)):
            raise FloatingPointError("non-finite value in matrix-vector product")
        anorm = np.linalg.norm(w)
        Vj = V[:j + 1]
        h = Vj @ w
        w = w - h @ Vj
        wnorm = np.linalg.norm(w)
        corr = Vj @ w
        if np.linalg.norm(corr) > reorth_tol * max(wnorm, 1e-300):
            w = w - corr @ Vj
            h = h + corr
            wnorm = np.linalg.norm(w)
        H[:j + 1, j] = h
        H[j + 1, j] = wnorm
        # happy breakdown: residual negligible against the unit basis vector
        # (scaled by beta) or against the size of A v_j itself
        if wnorm * beta <= breakdown_tol or wnorm <= 1e-14 * anorm:
            k = j + 1
            H[j + 1, j] = 0.0
            broke = True
            break
        V[j + 1] = w / wnorm
    return KrylovWorkspace(
        basis=V[:k + 1].T.copy() if not broke else V[:k].T.copy(),
        hessenberg=H[:k + 1, :k],
        beta=beta,
        breakdown=broke,
    )


def _group_terms(comb: PhiCombination) -> dict:
    groups = defaultdict(list)
    for w, l, g in comb.terms:
        groups[g].append((w, l))
    return groups


def _zero_scale(terms, v):
    return sum(w / math.factorial(l) for w, l in terms) * v


def phi_combination_action(
    comb: PhiCombination, a, dt: float, v: np.ndarray, m: int = 100,
    workspace: KrylovWorkspace | None = None,
) -> np.ndarray:
    """``sum_k w_k phi_{l_k}(gamma_k dt a) v`` by Krylov projection.

    One Arnoldi factorization serves every term (``K_m(gamma a, v)`` does not
    depend on ``gamma``).  When ``m >= N`` the exact dense route is used.
    A precomputed ``workspace`` for ``(a, v)`` may be passed in for reuse.
    """
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    if not comb or not np.any(v):
        return out
    n = v.size
    groups = _group_terms(comb)
    dense = workspace is None and m >= n
    if not dense and workspace is None:
        workspace = arnoldi(a, v, m)
    if dense:
        ad = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)
        if not np.all(np.isfinite(ad)):
            raise FloatingPointError("non-finite entries in matrix")
    for g, terms in groups.items():
        if g == 0.0:
            out += _zero_scale(terms, v)
            continue
        p = max(l for _, l in terms)
        if dense:
            cols = phi_vectors_dense(g * dt * ad, v, p)
            for w, l in terms:
                out += w * cols[:, l]
        else:
            k = workspace.size
            hk = workspace.hessenberg[:k, :k]
            e1 = np.zeros(k)
            e1[0] = 1.0
            cols = phi_vectors_dense(g * dt * hk, e1, p)
            y = np.zeros(k)
            for w, l in terms:
                y += w * cols[:, l]
            out += workspace.beta * (workspace.basis[:, :k] @ y)
    return out
