"""Cell problems on kY: the nonlinear k-cell energy, the linear (quadratic)
cell problem, the homogenized quadratic tensor, and explicit buckling seeds.

Energies are reported as cell averages, i.e. (1/k^n) * integral over kY, so
values are comparable across k.  The nonlinear solver is multistart L-BFGS;
a converged result certifies an upper bound on the discrete infimum and is
reported as an approximation of the k-cell relaxation at the given F.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import optim
from .densities import Density, QuadraticField
from .errors import AllStartsFailed, InvalidDelta, NotConverged
from .grids import PeriodicField, PeriodicGrid
from .tensors import SymTensor4

DET_FLOOR = 1e-8


@dataclass
class CellResult:
    energy: float
    corrector: PeriodicField
    converged: bool
    iterations: int
    grad_norm: float
    start_label: str

    def summary(self) -> dict:
        g = self.corrector.grid
        return {
            "energy": float(self.energy),
            "k": g.k,
            "res": g.res,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "grad_norm": float(self.grad_norm),
            "start_label": self.start_label,
        }


# ---------------------------------------------------------------------------
# linear (quadratic integrand) cell problem
# ---------------------------------------------------------------------------


def _quadratic_operator(Q: QuadraticField, grid: PeriodicGrid):
    """Stiffness action, right-hand side builder and diagonal for PCG."""
    n = grid.dim
    n2 = n * n
    Lq = Q.tensor_at(grid.quad_points)  # (EQ, n2, n2)
    w0 = grid.quad_weights[0]           # uniform weights

    def apply_A(x):
        v = x.reshape(grid.node_count, n)
        D = grid.gradient_at_quadrature(v).reshape(-1, n2)
        P = (w0 * np.einsum("mab,mb->ma", Lq, D)).reshape(-1, n, n)
        return grid.scatter_gradient(P).ravel()

    def rhs(G):
        S = np.broadcast_to(G.reshape(n2), (Lq.shape[0], n2))
        P = (w0 * np.einsum("mab,mb->ma", Lq, S)).reshape(-1, n, n)
        return -grid.scatter_gradient(P).ravel()

    # diagonal of A for Jacobi preconditioning
    E, Qn, C = grid.elem_count, grid.n_qp_per_elem, grid.n_corners
    Lblk = Lq.reshape(E, Qn, n, n, n, n)
    dcontrib = (w0 / grid.a**2) * np.einsum(
        "qca,qcb,eqiaib->eci", grid.DPHI, grid.DPHI, Lblk
    )
    diag = np.zeros((grid.node_count, n))
    flat_nodes = grid.elem_nodes.ravel()
    for i in range(n):
        diag[:, i] = np.bincount(
            flat_nodes, weights=dcontrib[:, :, i].ravel(), minlength=grid.node_count
        )
    diag = np.maximum(diag, 1e-14 * max(diag.max(), 1e-300)).ravel()

    def precond(r):
        return r / diag

    def project(x):
        v = x.reshape(grid.node_count, n)
        return (v - v.mean(axis=0)).ravel()

    return apply_A, rhs, precond, project, Lq, w0


def solve_linear_cell(
    Q: QuadraticField,
    G,
    grid: PeriodicGrid,
    tol: float = 1e-11,
    max_iter: int | None = None,
) -> CellResult:
    """Minimize the cell average of Q(y, G + grad phi) over periodic phi.

    Preconditioned CG on the Euler-Lagrange system restricted to mean-zero
    fields.  The energy is (1/k^n) * integral of Q(y, G + grad phi*).
    """
    G = np.asarray(G, dtype=float)
    n = grid.dim
    apply_A, rhs, precond, project, Lq, w0 = _quadratic_operator(Q, grid)
    b = rhs(G)
    x, info = optim.pcg(
        apply_A, b, rtol=tol, max_iter=max_iter, precond=precond, project=project
    )
    if not info.converged:
        raise NotConverged(
            f"linear cell CG stalled at residual {info.residual_norm:.3e}"
        )
    v = x.reshape(grid.node_count, n)
    corr = PeriodicField(grid, v).project_mean_zero()
    D = grid.gradient_at_quadrature(corr.values)
    S = (G[None] + D).reshape(-1, n * n)
    energy = w0 * float(np.einsum("ma,mab,mb->", S, Lq, S)) / grid.k**n
    return CellResult(
        energy=energy,
        corrector=corr,
        converged=True,
        iterations=info.iterations,
        grad_norm=info.residual_norm,
        start_label="linear",
    )


@dataclass
class HomTensor:
    """Homogenized quadratic form with its per-direction correctors."""

    L_hom: SymTensor4
    correctors: list  # PeriodicField per matrix basis direction (row-major)
    per_direction_energy: np.ndarray
    major_symmetry_defect: float

    def quad(self, G) -> float:
        return float(self.L_hom.quad(np.asarray(G, dtype=float)))

    def corrector_for(self, G) -> PeriodicField:
        """Corrector for an arbitrary direction by linearity."""
        G = np.asarray(G, dtype=float).ravel()
        grid = self.correctors[0].grid
        vals = np.zeros_like(self.correctors[0].values)
        for coeff, c in zip(G, self.correctors):
            vals += coeff * c.values
        return PeriodicField(grid, vals)


def homogenized_tensor(
    Q: QuadraticField, grid: PeriodicGrid, tol: float = 1e-11
) -> HomTensor:
    """Assemble the homogenized tensor by solving the n^2 basis cell problems.

    Entries are the energy bilinear form at the correctors, which makes the
    assembled tensor variationally consistent: it reproduces each
    per-direction energy exactly and is symmetric up to solver tolerance.
    """
    n = grid.dim
    n2 = n * n
    apply_A, rhs, precond, project, Lq, w0 = _quadratic_operator(Q, grid)
    S_all = []
    correctors = []
    for d in range(n2):
        G = np.zeros((n, n))
        G[d // n, d % n] = 1.0
        b = rhs(G)
        x, info = optim.pcg(apply_A, b, rtol=tol, precond=precond, project=project)
        if not info.converged:
            raise NotConverged(f"direction {d}: CG residual {info.residual_norm:.3e}")
        v = x.reshape(grid.node_count, n)
        corr = PeriodicField(grid, v).project_mean_zero()
        correctors.append(corr)
        D = grid.gradient_at_quadrature(corr.values)
        S_all.append((G[None] + D).reshape(-1, n2))
    voln = grid.k**grid.dim
    B = np.empty((n2, n2))
    T_all = [np.einsum("mab,mb->ma", Lq, S) for S in S_all]
    for d1 in range(n2):
        for d2 in range(d1, n2):
            val = w0 * float(np.einsum("ma,ma->", S_all[d1], T_all[d2])) / voln
            B[d1, d2] = val
            B[d2, d1] = val
    defect = float(np.max(np.abs(B - B.T)))
    return HomTensor(
        L_hom=SymTensor4(B, n=n, psd=True),
        correctors=correctors,
        per_direction_energy=np.diag(B).copy(),
        major_symmetry_defect=defect,
    )


# ---------------------------------------------------------------------------
# nonlinear k-cell problem
# ---------------------------------------------------------------------------


def cell_energy(W: Density, F, grid: PeriodicGrid, corrector: PeriodicField) -> float:
    """Cell-average energy of a given corrector field (no minimization)."""
    bound = W.bind(grid.quad_points)
    F = np.asarray(F, dtype=float)
    D = grid.gradient_at_quadrature(corrector.values)
    Wv = bound.energy_density(F[None] + D)
    return grid.integrate(Wv) / grid.k**grid.dim


def solve_nonlinear_cell(
    W: Density,
    F,
    grid: PeriodicGrid,
    starts=None,
    tol: float = 1e-8,
    max_iter: int = 5000,
    seed: int = 0,
    det_guard: bool | None = None,
) -> CellResult:
    """Multistart quasi-Newton minimization of the k-cell energy.

    Runs L-BFGS (memory 10, strong Wolfe) from every start and returns the
    lowest converged result; ties within 1e-12 are broken by start order.

    det_guard=True makes the line search reject states with a material
    quadrature point at det(F + grad phi) <= 1e-8.  The default (None)
    guards stvk but not dist2: the stvk energy has spurious zero-energy
    reflection wells (its dist^2 lower bound fails there), so under strong
    compression an unguarded slab folds through det < 0 at near-zero cost;
    dist2 handles det < 0 correctly via signed singular values, and the
    layered bending branch genuinely crosses det = 0 in the soft phase.
    """
    F = np.asarray(F, dtype=float)
    n = grid.dim
    bound = W.bind(grid.quad_points)
    w0 = grid.quad_weights[0]
    voln = grid.k**grid.dim
    zero_grad = np.zeros(grid.node_count * n)
    guard = (W.base == "stvk") if det_guard is None else det_guard

    def fg(x):
        v = x.reshape(grid.node_count, n)
        D = grid.gradient_at_quadrature(v)
        Fp = F[None] + D
        if guard and bound.min_material_det(Fp) <= DET_FLOOR:
            return np.inf, zero_grad
        Wv, dW = bound.energy_and_grad(Fp)
        e = w0 * float(np.sum(Wv)) / voln
        g = grid.scatter_gradient(dW) * (w0 / voln)
        return e, g.ravel()

    if starts is None:
        starts = default_starts(W, F, grid, seed=seed)
    # absolute gradient tolerance from the zero-corrector response
    g0 = fg(np.zeros(grid.node_count * n))[1]
    scale = max(1.0, float(np.max(np.abs(g0))) if g0.size else 0.0)
    gtol = tol * scale

    best = None
    failures = []
    for label, values in starts:
        x0 = (values - values.mean(axis=0)).ravel()
        f0 = fg(x0)[0]
        if not np.isfinite(f0):
            failures.append((label, "start violates det guard"))
            continue
        r = optim.minimize_lbfgs(fg, x0, gtol=gtol, max_iter=max_iter)
        cand = CellResult(
            energy=r.f,
            corrector=PeriodicField(grid, r.x.reshape(-1, n)).project_mean_zero(),
            converged=r.converged,
            iterations=r.iterations,
            grad_norm=r.grad_norm,
            start_label=label,
        )
        if best is None:
            best = cand
        else:
            strictly_lower = cand.energy < best.energy - 1e-12
            if (cand.converged and not best.converged) or (
                cand.converged == best.converged and strictly_lower
            ):
                best = cand
    if best is None:
        raise AllStartsFailed("; ".join(f"{l}: {m}" for l, m in failures))
    return best


# ---------------------------------------------------------------------------
# explicit construction seeds
# ---------------------------------------------------------------------------


def _solve_sinc(target: float) -> float:
    """Root of sin(x)/x = target on (0, pi)."""
    lo, hi = 1e-9, np.pi - 1e-9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sin(mid) / mid > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bending_curve(delta: float, k: int):
    """Periodic inextensible midline for compression 1 - delta along e1.

    Two mirrored circular arcs of constant curvature 2*kappa_delta/k over
    [0, k] (arc length), advancing k(1-delta); tangent and normal fields are
    continuous and k-periodic, so the construction has no seam on the torus.
    kappa_delta solves sinc(kappa/2) = 1 - delta as for a single arc.
    Returns (position fn, theta fn, kappa_delta).
    """
    if delta == 0.0:
        return (
            lambda t: np.stack([np.asarray(t, dtype=float), np.zeros_like(t)], -1),
            lambda t: np.zeros_like(np.asarray(t, dtype=float)),
            0.0,
        )
    half_turn = _solve_sinc(1.0 - delta)  # = kappa_delta / 2
    kappa_delta = 2.0 * half_turn
    kap = 2.0 * kappa_delta / k  # arc curvature on the k-cell
    phi2 = half_turn  # tangent angle amplitude

    def theta(t):
        t = np.mod(np.asarray(t, dtype=float), k)
        first = t < 0.5 * k
        return np.where(first, -phi2 + kap * t, phi2 - kap * (t - 0.5 * k))

    adv = k * (1.0 - delta)

    def position(t):
        t = np.asarray(t, dtype=float)
        wrap = np.floor(t / k)
        tm = t - wrap * k
        first = tm < 0.5 * k
        th = theta(tm)
        p1a = (np.sin(th) + np.sin(phi2)) / kap
        p2a = (np.cos(phi2) - np.cos(th)) / kap
        p1h = 2.0 * np.sin(phi2) / kap
        p1b = p1h + (np.sin(phi2) - np.sin(th)) / kap
        p2b = (np.cos(th) - np.cos(phi2)) / kap
        p1 = np.where(first, p1a, p1b) + wrap * adv
        p2 = np.where(first, p2a, p2b)
        return np.stack([p1, p2], axis=-1)

    return position, theta, kappa_delta


def bending_ansatz(delta: float, k: int, grid: PeriodicGrid) -> PeriodicField:
    """Layer-bending displacement seed of the 2D layered composite.

    The stiff layers ride an inextensible periodic midline (bending_curve)
    with the tent-profile normal offset; the returned corrector is the
    displacement relative to the homogeneous compression F_delta =
    Id - delta e1 x e1, kY-periodic and mean-zero.
    """
    if not 0.0 <= delta < 0.5:
        raise InvalidDelta(f"delta = {delta} outside [0, 1/2)")
    if grid.dim != 2 or grid.k != k:
        raise ValueError("grid must be a 2D kY grid matching k")
    if delta == 0.0:
        return PeriodicField.zeros(grid)
    position, theta, _ = bending_curve(delta, k)
    y = grid.node_coords()
    t = y[:, 0]
    p = position(t)
    th = theta(t)
    nrm = np.stack([-np.sin(th), np.cos(th)], axis=-1)
    frac = np.mod(y[:, 1], 1.0)
    off = np.where(frac < 0.5, frac, 1.0 - frac)
    u1 = p[:, 0] + off * nrm[:, 0]
    u2 = y[:, 1] + p[:, 1] + off * (nrm[:, 1] - 1.0)
    phi = np.stack([u1 - (1.0 - delta) * y[:, 0], u2 - y[:, 1]], axis=-1)
    return PeriodicField(grid, phi).project_mean_zero()


def _bessel_j0(x: float) -> float:
    t = np.linspace(0.0, np.pi, 801)
    vals = np.cos(x * np.sin(t))
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(t)) / np.pi)


def rod_bending_ansatz(W: Density, grid: PeriodicGrid, pad: float | None = None) -> PeriodicField:
    """Inextensible-rod seed relaxing the axial prestress of the cylinder.

    The rod of natural length (1+s) per cell bows in the (y1, y2) plane
    along a smooth k-periodic unit-speed curve whose tangent angle is
    theta0 * cos(2 pi sigma / ((1+s) k)), with theta0 chosen so the curve
    advances exactly k per cell (J0(theta0) = 1/(1+s)).  The displacement
    is applied only on nodes near the rod; the surrounding void carries the
    mismatch at zero energy cost.
    """
    if not W.microstructure.startswith("prestressed"):
        raise ValueError("rod ansatz applies to prestressed microstructures")
    if grid.dim != 3:
        raise ValueError("rod ansatz is 3D")
    s = W.s
    k = grid.k
    target = 1.0 / (1.0 + s)
    lo, hi = 0.0, 2.4
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _bessel_j0(mid) > target:
            lo = mid
        else:
            hi = mid
    theta0 = 0.5 * (lo + hi)
    L = (1.0 + s) * k  # deformed arc length per cell

    y = grid.node_coords()
    sigma = (1.0 + s) * y[:, 0]
    # cumulative position along the curve on a fine deterministic grid
    m = 4096 * k
    sg = np.linspace(0.0, L, m + 1)
    th_g = theta0 * np.cos(2.0 * np.pi * sg / L)
    c = np.cos(th_g)
    sn = np.sin(th_g)
    dx = L / m
    p1_g = np.concatenate([[0.0], np.cumsum(0.5 * (c[1:] + c[:-1]) * dx)])
    p2_g = np.concatenate([[0.0], np.cumsum(0.5 * (sn[1:] + sn[:-1]) * dx)])
    # remove the secular drift so p2 is exactly periodic despite quadrature error
    p1_g -= (p1_g[-1] - k) * sg / L
    p2_g -= p2_g[-1] * sg / L
    p1 = np.interp(sigma, sg, p1_g)
    p2 = np.interp(sigma, sg, p2_g)
    th = theta0 * np.cos(2.0 * np.pi * sigma / L)
    n1, n2 = -np.sin(th), np.cos(th)

    # every rod copy in kY follows its own translated curve; offsets use the
    # local cross-section coordinate
    y2_loc = np.mod(y[:, 1], 1.0)
    u1 = p1 + (y2_loc - 0.5) * n1
    psi2 = p2 + (y2_loc - 0.5) * (n2 - 1.0)
    psi = np.stack([u1 - y[:, 0], psi2, np.zeros(len(y))], axis=-1)

    if pad is None:
        pad = 2.0 * grid.a
    yf = np.mod(y, 1.0)
    near = (yf[:, 1] - 0.5) ** 2 + (yf[:, 2] - 0.75) ** 2 <= (W.rho + pad) ** 2
    psi[~near] = 0.0
    return PeriodicField(grid, psi).project_mean_zero()


def plate_buckle_ansatz(strain: float, grid: PeriodicGrid) -> PeriodicField:
    """Out-of-plane deflection seed for the compressed stiff slab (3D).

    w(y2) = A sin(2 pi y2 / k) with A sized so the averaged von Karman
    membrane strain cancels the imposed compression `strain` along e2.
    The deflection is applied uniformly in y3 (a pure e3 x e2 shear with
    det = 1 everywhere); the rod picks up a mild distortion the optimizer
    relaxes, which keeps the seed orientation-preserving on coarse grids
    where no void element row separates slab and rod.
    """
    if grid.dim != 3:
        raise ValueError("plate ansatz is 3D")
    if strain <= 0.0:
        return PeriodicField.zeros(grid)
    k = grid.k
    A = k * np.sqrt(strain) / np.pi
    y = grid.node_coords()
    w = A * np.sin(2.0 * np.pi * y[:, 1] / k)
    psi = np.zeros((len(y), 3))
    psi[:, 2] = w
    return PeriodicField(grid, psi).project_mean_zero()


def default_starts(W: Density, F, grid: PeriodicGrid, seed: int = 0, n_random: int = 3):
    """Multistart set: zero, construction seeds scaled +-10%, random fields.

    The buckled branches of the layered and prestressed composites are
    local minima invisible from the zero start; the explicit seeds make
    them reachable.
    """
    F = np.asarray(F, dtype=float)
    n = grid.dim
    starts = [("zero", np.zeros((grid.node_count, n)))]
    if n == 2 and W.microstructure == "layered":
        delta = 1.0 - float(np.linalg.norm(F[:, 0]))
        if 0.01 < delta < 0.5:
            bend = bending_ansatz(delta, grid.k, grid)
            starts.append(("bend", bend.values))
            starts.append(("bend+", 1.1 * bend.values))
            starts.append(("bend-", 0.9 * bend.values))
    if W.microstructure.startswith("prestressed"):
        if W.microstructure != "prestressed_stiff":
            rod = rod_bending_ansatz(W, grid)
            starts.append(("rod", rod.values))
        if W.microstructure != "prestressed_rod":
            strain = 1.0 - float(np.linalg.norm(F[:, 1]))
            if strain > 1e-3:
                plate = plate_buckle_ansatz(strain, grid)
                starts.append(("plate", plate.values))
                starts.append(("plate/2", 0.5 * plate.values))
                if W.microstructure == "prestressed_perforated":
                    rod = rod_bending_ansatz(W, grid)
                    starts.append(("rod+plate", rod.values + plate.values))
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        starts.append((f"rand{i}", 0.01 * rng.normal(size=(grid.node_count, n))))
    return starts


def khom_curve(
    W: Density,
    F,
    k_list,
    grid_res: int,
    tol: float = 1e-8,
    seed: int = 0,
    max_iter: int = 5000,
):
    """k-cell energies over k_list with the running minimum as the
    multi-cell surrogate.

    Each k reuses the periodized best corrector of every divisor k' in the
    list as an extra start, which makes the running minimum monotone along
    doubling chains up to solver tolerance.
    """
    F = np.asarray(F, dtype=float)
    records = []
    best_fields = {}
    for k in sorted(k_list):
        grid = PeriodicGrid(W.dim, k, grid_res)
        starts = default_starts(W, F, grid, seed=seed)
        for kp, fld in best_fields.items():
            if k % kp == 0 and k != kp:
                starts.append((f"periodized-k{kp}", fld.periodize(k).values))
        res = solve_nonlinear_cell(
            W, F, grid, starts=starts, tol=tol, max_iter=max_iter, seed=seed
        )
        best_fields[k] = res.corrector
        records.append((k, res))
    running = []
    cur = np.inf
    for k, res in records:
        cur = min(cur, res.energy)
        running.append((k, cur))
    return records, running
