"""Small dense matrix kernels for n in {2, 3}.

Everything here is vectorized over a leading batch axis: a "matrix array"
has shape (..., n, n).  The polar/distance kernels use the signed
singular-value convention: when det F < 0 the smallest singular value is
negated, which makes dist2_SO continuous and equal to the squared
geometric distance |F - R|^2 to the nearest rotation.

2x2 decompositions are closed form (rotation-angle parametrization);
3x3 uses a cyclic Jacobi eigensolver on F^T F.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularInput

SINGULAR_TOL = 1e-12
_JACOBI_TOL = 1e-14
_JACOBI_MAX_SWEEPS = 30


def sym(F):
    """Symmetric part (F + F^T)/2."""
    F = np.asarray(F, dtype=float)
    return 0.5 * (F + np.swapaxes(F, -1, -2))


def skw(F):
    """Skew part, computed as F - sym(F) so sym(F) + skw(F) == F exactly
    in floating point (antisymmetry then holds to one ulp)."""
    F = np.asarray(F, dtype=float)
    return F - sym(F)


def frob(F):
    """Frobenius norm over the last two axes."""
    F = np.asarray(F, dtype=float)
    return np.sqrt(np.einsum("...ij,...ij->...", F, F))


def det(F):
    F = np.asarray(F, dtype=float)
    n = F.shape[-1]
    if n == 2:
        return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    if n == 3:
        return (
            F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
            - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
            + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
        )
    raise ValueError(f"only n in {{2,3}} supported, got n={n}")


# ---------------------------------------------------------------------------
# 2x2: closed-form signed SVD.
#
# With x = F00+F11, y = F10-F01, z = F00-F11, w = F01+F10 one has
# F = R(a) diag(s1, s2) R(b)^T where a+b = atan2(y,x), a-b = atan2(w,z),
# s1 = (r1+r2)/2, s2 = (r1-r2)/2, r1 = |(x,y)|, r2 = |(z,w)|.  s2 carries
# the sign of det F automatically (det F = s1*s2), so this *is* the signed
# convention.
# ---------------------------------------------------------------------------


def _svd2_angles(F):
    x = F[..., 0, 0] + F[..., 1, 1]
    y = F[..., 1, 0] - F[..., 0, 1]
    z = F[..., 0, 0] - F[..., 1, 1]
    w = F[..., 0, 1] + F[..., 1, 0]
    r1 = np.hypot(x, y)
    r2 = np.hypot(z, w)
    a_minus_b = np.arctan2(y, x)
    a_plus_b = np.arctan2(w, z)
    s1 = 0.5 * (r1 + r2)
    s2 = 0.5 * (r1 - r2)
    return 0.5 * (a_plus_b + a_minus_b), 0.5 * (a_plus_b - a_minus_b), s1, s2


def _rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    R = np.empty(theta.shape + (2, 2))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    return R


# ---------------------------------------------------------------------------
# 3x3: vectorized cyclic Jacobi on C = F^T F.
# ---------------------------------------------------------------------------


def _jacobi_eig3(C):
    """Eigendecomposition of a batch of symmetric 3x3 matrices.

    Returns (lam, V) with lam ascendingly unordered (sorted later);
    columns of V are eigenvectors.  Sweeps until the off-diagonal mass is
    below _JACOBI_TOL relative to the diagonal scale.
    """
    B = np.array(C, dtype=float)
    batch = B.shape[:-2]
    V = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    scale = np.maximum(np.abs(B).max(axis=(-1, -2)), 1e-300)
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = np.sqrt(
            B[..., 0, 1] ** 2 + B[..., 0, 2] ** 2 + B[..., 1, 2] ** 2
        )
        if np.all(off <= _JACOBI_TOL * scale):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = B[..., p, q]
            active = np.abs(apq) > _JACOBI_TOL * scale * 1e-2
            if not np.any(active):
                continue
            app = B[..., p, p]
            aqq = B[..., q, q]
            with np.errstate(divide="ignore", invalid="ignore"):
                tau = (aqq - app) / (2.0 * apq)
            t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(tau == 0.0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # rotate rows/cols p,q of B and columns p,q of V
            Bp = B[..., p, :].copy()
            Bq = B[..., q, :].copy()
            B[..., p, :] = c[..., None] * Bp - s[..., None] * Bq
            B[..., q, :] = s[..., None] * Bp + c[..., None] * Bq
            Bp = B[..., :, p].copy()
            Bq = B[..., :, q].copy()
            B[..., :, p] = c[..., None] * Bp - s[..., None] * Bq
            B[..., :, q] = s[..., None] * Bp + c[..., None] * Bq
            Vp = V[..., :, p].copy()
            Vq = V[..., :, q].copy()
            V[..., :, p] = c[..., None] * Vp - s[..., None] * Vq
            V[..., :, q] = s[..., None] * Vp + c[..., None] * Vq
    lam = np.stack([B[..., 0, 0], B[..., 1, 1], B[..., 2, 2]], axis=-1)
    return lam, V


def _signed_svd3(F):
    """Signed SVD of a batch of 3x3 matrices: F = U diag(s) V^T.

    U, V are proper rotations; the smallest singular value carries the
    sign of det F.  Degenerate directions of U are completed by cross
    products so U stays orthogonal even for rank-deficient F.
    """
    lam, V = _jacobi_eig3(F.swapaxes(-1, -2) @ F)
    order = np.argsort(-lam, axis=-1)
    lam = np.take_along_axis(lam, order, axis=-1)
    V = np.take_along_axis(V, order[..., None, :], axis=-1)
    # make V a proper rotation
    detV = det(V)
    V[..., :, 2] *= np.sign(detV)[..., None]
    s = np.sqrt(np.clip(lam, 0.0, None))
    FV = F @ V
    U = np.empty_like(FV)
    tol = SINGULAR_TOL * np.maximum(s[..., :1], 1.0)
    u0 = FV[..., :, 0]
    n0 = np.linalg.norm(u0, axis=-1, keepdims=True)
    u0 = np.where(n0 > tol, u0 / np.maximum(n0, 1e-300), _fallback_e(u0, 0))
    u1 = FV[..., :, 1]
    u1 = u1 - np.einsum("...i,...i->...", u1, u0)[..., None] * u0
    n1 = np.linalg.norm(u1, axis=-1, keepdims=True)
    u1 = np.where(n1 > tol, u1 / np.maximum(n1, 1e-300), _orth_completion(u0))
    u2 = np.cross(u0, u1)
    U[..., :, 0] = u0
    U[..., :, 1] = u1
    U[..., :, 2] = u2
    # U is proper by construction; the sign of det F lives in the smallest
    # singular value so that F = U diag(s) V^T holds with U, V in SO(3).
    neg = det(F) < 0.0
    s[..., 2] = np.where(neg, -s[..., 2], s[..., 2])
    return U, s, V


def _fallback_e(u, axis):
    e = np.zeros_like(u)
    e[..., axis] = 1.0
    return e


def _orth_completion(u0):
    """Any unit vector orthogonal to u0 (batchwise, deterministic)."""
    trial = np.zeros_like(u0)
    small = np.abs(u0[..., 0]) <= np.abs(u0[..., 1])
    trial[..., 0] = np.where(small, 1.0, 0.0)
    trial[..., 1] = np.where(small, 0.0, 1.0)
    v = np.cross(u0, trial)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(n, 1e-300)


def signed_singular_values(F):
    """Singular values, descending, smallest negated when det F < 0."""
    F = np.asarray(F, dtype=float)
    n = F.shape[-1]
    if n == 2:
        _, _, s1, s2 = _svd2_angles(F)
        return np.stack([s1, s2], axis=-1)
    if n == 3:
        _, s, _ = _signed_svd3(F)
        return s
    raise ValueError(f"only n in {{2,3}} supported, got n={n}")


def dist2_SO(F):
    """Squared distance to SO(n): sum_i (sigma_i - 1)^2, sigmas signed."""
    s = signed_singular_values(F)
    return np.sum((s - 1.0) ** 2, axis=-1)


def polar_rotation(F, return_flag=False):
    """Rotation R in SO(n) minimizing |F - R|.

    Computed from the signed SVD (det-sign correction flips the weakest
    singular direction).  With return_flag=True also returns a boolean
    mask marking inputs with a singular value below SINGULAR_TOL, where
    the minimizer is not unique (any flagged R is still *a* minimizer).
    """
    F = np.asarray(F, dtype=float)
    n = F.shape[-1]
    if n == 2:
        a, b, s1, s2 = _svd2_angles(F)
        R = _rot2(a - b)  # U V^T for proper-rotation factors
        degenerate = np.minimum(np.abs(s1), np.abs(s2)) < SINGULAR_TOL
    elif n == 3:
        U, s, V = _signed_svd3(F)
        R = U @ np.swapaxes(V, -1, -2)
        degenerate = np.min(np.abs(s), axis=-1) < SINGULAR_TOL
    else:
        raise ValueError(f"only n in {{2,3}} supported, got n={n}")
    if return_flag:
        return R, degenerate
    return R


def polar_rotation_strict(F):
    """Like polar_rotation but raises SingularInput on degenerate F."""
    R, degenerate = polar_rotation(F, return_flag=True)
    if np.any(degenerate):
        raise SingularInput("singular value below tolerance 1e-12")
    return R


def dist2_and_polar(F):
    """(dist2_SO(F), polar_rotation(F)) sharing one decomposition."""
    F = np.asarray(F, dtype=float)
    n = F.shape[-1]
    if n == 2:
        a, b, s1, s2 = _svd2_angles(F)
        d2 = (s1 - 1.0) ** 2 + (s2 - 1.0) ** 2
        return d2, _rot2(a - b)
    if n == 3:
        U, s, V = _signed_svd3(F)
        d2 = np.sum((s - 1.0) ** 2, axis=-1)
        return d2, U @ np.swapaxes(V, -1, -2)
    raise ValueError(f"only n in {{2,3}} supported, got n={n}")


# ---------------------------------------------------------------------------
# Symmetric fourth-order tensors, stored as (n^2, n^2) arrays acting on
# row-major flattened matrices.
# ---------------------------------------------------------------------------


class SymTensor4:
    """Linear map L on n x n matrices with <LA,B> = <LB,A>.

    Stored as an (n^2, n^2) array; `coeff` is symmetrized on input so the
    major symmetry holds exactly as stored.
    """

    def __init__(self, coeff, n=None, psd=False):
        coeff = np.asarray(coeff, dtype=float)
        if coeff.ndim != 2 or coeff.shape[0] != coeff.shape[1]:
            raise ValueError("coeff must be a square n^2 x n^2 array")
        if n is None:
            n = int(round(np.sqrt(coeff.shape[0])))
        if n * n != coeff.shape[0] or n not in (2, 3):
            raise ValueError("coeff must be n^2 x n^2 with n in {2,3}")
        self.n = n
        self.coeff = 0.5 * (coeff + coeff.T)
        self.psd = bool(psd)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n * n), n=n, psd=True)

    @classmethod
    def sym_projector(cls, n):
        """L with <LG,G> = |sym G|^2."""
        m = n * n
        P = np.zeros((m, m))
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    for l in range(n):
                        P[i * n + j, k * n + l] = 0.5 * (
                            (i == k) * (j == l) + (i == l) * (j == k)
                        )
        return cls(P, n=n, psd=True)

    def apply(self, G):
        """L G as a matrix (batched)."""
        G = np.asarray(G, dtype=float)
        batch = G.shape[:-2]
        v = G.reshape(batch + (self.n * self.n,))
        out = np.einsum("ab,...b->...a", self.coeff, v)
        return out.reshape(batch + (self.n, self.n))

    def quad(self, G):
        """<L G, G> (batched scalar)."""
        G = np.asarray(G, dtype=float)
        batch = G.shape[:-2]
        v = G.reshape(batch + (self.n * self.n,))
        return np.einsum("...a,ab,...b->...", v, self.coeff, v)

    def inner(self, A, B):
        """<L A, B> (batched scalar)."""
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        va = A.reshape(A.shape[:-2] + (self.n * self.n,))
        vb = B.reshape(B.shape[:-2] + (self.n * self.n,))
        return np.einsum("...a,ab,...b->...", va, self.coeff, vb)

    def major_symmetry_defect(self):
        return float(np.max(np.abs(self.coeff - self.coeff.T)))

    def is_psd(self, tol=1e-10):
        w = np.linalg.eigvalsh(self.coeff)
        return bool(w.min() >= -tol * max(1.0, w.max()))

    def __repr__(self):
        return f"SymTensor4(n={self.n})"


def quad_value(L: SymTensor4, G):
    """<L G, G>; module-level convenience mirroring SymTensor4.quad."""
    return L.quad(G)
