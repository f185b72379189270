"""Dirichlet problems on a bounded domain: the four functionals of the
homogenization/linearization diagram, the boundary seminorm |F|_gamma, and
the equi-coercivity probe.

The domain is the unit square with Q1 elements; gamma (the Dirichlet set
carrying g = 0) is the left edge by default.  Loads are an affine lift
g = M x on the remaining boundary, an optional constant body force, or
both; without a load every functional is minimized by zero.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import optim
from .cells import homogenized_tensor, solve_nonlinear_cell
from .densities import Density, QuadraticField
from .errors import NotConverged, UnsupportedLoad
from .grids import PeriodicGrid
from .tensors import SymTensor4

_GAUSS_1D = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


class DomainMesh:
    """Q1 mesh of the unit square with a tagged Dirichlet edge gamma."""

    def __init__(self, res: int = 16, gamma: str = "left"):
        if res < 2:
            raise ValueError("res must be >= 2")
        if gamma not in ("left", "right", "bottom", "top"):
            raise ValueError("gamma must name an edge of the unit square")
        self.dim = 2
        self.res = int(res)
        self.gamma = gamma
        self.a = 1.0 / res
        nn = res + 1
        self.nodes_per_axis = nn
        self.node_count = nn * nn
        self.elem_count = res * res

        xi = np.array(list(itertools.product(_GAUSS_1D, repeat=2)))
        offs = np.array(list(itertools.product((0, 1), repeat=2)), dtype=np.int64)
        C = Q = 4
        self.PHI = np.ones((Q, C))
        self.DPHI = np.zeros((Q, C, 2))
        for c, off in enumerate(offs):
            for q in range(Q):
                vals = np.where(off == 1, xi[q], 1.0 - xi[q])
                self.PHI[q, c] = np.prod(vals)
                for axis in range(2):
                    d = 1.0 if off[axis] == 1 else -1.0
                    self.DPHI[q, c, axis] = d * vals[1 - axis]
        idx = np.indices((res, res)).reshape(2, -1).T
        self.elem_nodes = np.empty((self.elem_count, C), dtype=np.int64)
        for c, off in enumerate(offs):
            self.elem_nodes[:, c] = np.ravel_multi_index((idx + off).T, (nn, nn))
        qp = (idx[:, None, :] + xi[None, :, :]) * self.a
        self.quad_points = qp.reshape(-1, 2)
        self.quad_weights = np.full(self.elem_count * Q, (self.a / 2.0) ** 2)
        self.n_qp_per_elem = Q
        self.n_corners = C

        coords = self.node_coords()
        eps = 1e-12
        edge = {
            "left": coords[:, 0] < eps,
            "right": coords[:, 0] > 1 - eps,
            "bottom": coords[:, 1] < eps,
            "top": coords[:, 1] > 1 - eps,
        }
        self.gamma_mask = edge[gamma]
        self.boundary_mask = (
            edge["left"] | edge["right"] | edge["bottom"] | edge["top"]
        )

    def node_coords(self) -> np.ndarray:
        nn = self.nodes_per_axis
        idx = np.indices((nn, nn)).reshape(2, -1).T
        return idx * self.a

    def gradient_at_quadrature(self, values: np.ndarray) -> np.ndarray:
        fv = values[self.elem_nodes]
        return (np.einsum("qca,ecm->eqma", self.DPHI, fv) / self.a).reshape(
            -1, values.shape[1], 2
        )

    def value_at_quadrature(self, values: np.ndarray) -> np.ndarray:
        fv = values[self.elem_nodes]
        return np.einsum("qc,ecm->eqm", self.PHI, fv).reshape(-1, values.shape[1])

    def scatter_gradient(self, P: np.ndarray) -> np.ndarray:
        m = P.shape[1]
        Pe = P.reshape(self.elem_count, self.n_qp_per_elem, m, 2)
        contrib = np.einsum("qca,eqma->ecm", self.DPHI, Pe) / self.a
        out = np.empty((self.node_count, m))
        flat = self.elem_nodes.ravel()
        for j in range(m):
            out[:, j] = np.bincount(
                flat, weights=contrib[:, :, j].ravel(), minlength=self.node_count
            )
        return out

    def scatter_value(self, P: np.ndarray) -> np.ndarray:
        m = P.shape[1]
        Pe = P.reshape(self.elem_count, self.n_qp_per_elem, m)
        contrib = np.einsum("qc,eqm->ecm", self.PHI, Pe)
        out = np.empty((self.node_count, m))
        flat = self.elem_nodes.ravel()
        for j in range(m):
            out[:, j] = np.bincount(
                flat, weights=contrib[:, :, j].ravel(), minlength=self.node_count
            )
        return out

    def integrate(self, values) -> float:
        return float(np.dot(self.quad_weights, np.asarray(values, dtype=float)))

    def gamma_segments(self):
        """(start, end) coordinates of the gamma edge segments."""
        t = np.linspace(0.0, 1.0, self.res + 1)
        if self.gamma == "left":
            pts = np.stack([np.zeros_like(t), t], axis=-1)
        elif self.gamma == "right":
            pts = np.stack([np.ones_like(t), t], axis=-1)
        elif self.gamma == "bottom":
            pts = np.stack([t, np.zeros_like(t)], axis=-1)
        else:
            pts = np.stack([t, np.ones_like(t)], axis=-1)
        return pts[:-1], pts[1:]


@dataclass
class Load:
    """Affine Dirichlet lift g = lift @ x on the non-gamma boundary and/or a
    constant body force."""

    lift: np.ndarray | None = None
    force: np.ndarray | None = None

    def validated(self, mesh: DomainMesh) -> "Load":
        lift = None if self.lift is None else np.asarray(self.lift, dtype=float)
        force = None if self.force is None else np.asarray(self.force, dtype=float)
        if lift is not None:
            if lift.shape != (2, 2):
                raise UnsupportedLoad("lift must be a 2x2 matrix")
            # the lift must vanish on gamma for boundary data continuity:
            # the column multiplying the coordinate that varies along gamma
            # has to be zero.
            tangential = {"left": 1, "right": 1, "bottom": 0, "top": 0}[mesh.gamma]
            if np.max(np.abs(lift[:, tangential])) > 1e-14:
                if mesh.gamma in ("left", "bottom") and _edge_offset(mesh) == 0.0:
                    raise UnsupportedLoad(
                        "lift does not vanish on gamma: column "
                        f"{tangential} must be zero for gamma={mesh.gamma}"
                    )
        if force is not None and force.shape != (2,):
            raise UnsupportedLoad("force must be a 2-vector")
        return Load(lift, force)


def _edge_offset(mesh):
    return 0.0 if mesh.gamma in ("left", "bottom") else 1.0


def boundary_values(mesh: DomainMesh, load: Load) -> np.ndarray:
    """Full nodal field holding the Dirichlet data (zero in the interior)."""
    vals = np.zeros((mesh.node_count, 2))
    if load.lift is not None:
        coords = mesh.node_coords()
        on_lift = mesh.boundary_mask & ~mesh.gamma_mask
        vals[on_lift] = coords[on_lift] @ load.lift.T
    vals[mesh.gamma_mask] = 0.0
    return vals


# ---------------------------------------------------------------------------
# quadratic functionals (I_lin_eps and I0)
# ---------------------------------------------------------------------------


def _domain_quadratic_operator(mesh: DomainMesh, Lq: np.ndarray):
    n2 = 4
    w0 = mesh.quad_weights[0]

    def apply_A(values):
        D = mesh.gradient_at_quadrature(values).reshape(-1, n2)
        P = (w0 * np.einsum("mab,mb->ma", Lq, D)).reshape(-1, 2, 2)
        return mesh.scatter_gradient(P)

    E, Qn = mesh.elem_count, mesh.n_qp_per_elem
    Lblk = Lq.reshape(E, Qn, 2, 2, 2, 2)
    dcontrib = (w0 / mesh.a**2) * np.einsum(
        "qca,qcb,eqiaib->eci", mesh.DPHI, mesh.DPHI, Lblk
    )
    diag = np.zeros((mesh.node_count, 2))
    flat = mesh.elem_nodes.ravel()
    for i in range(2):
        diag[:, i] = np.bincount(
            flat, weights=dcontrib[:, :, i].ravel(), minlength=mesh.node_count
        )
    diag = np.maximum(diag, 1e-14 * max(diag.max(), 1e-300))
    return apply_A, diag


def _solve_quadratic(mesh, Lq, load: Load, tol: float):
    """Minimize sum w * <L(x) grad g, grad g> - int f.g over A_gamma + lift."""
    apply_A, diag = _domain_quadratic_operator(mesh, Lq)
    fixed = mesh.boundary_mask
    free = ~fixed
    g0 = boundary_values(mesh, load)
    b = np.zeros((mesh.node_count, 2))
    if load.force is not None:
        fq = np.broadcast_to(load.force, (len(mesh.quad_points), 2))
        b += 0.5 * mesh.scatter_value(mesh.quad_weights[:, None] * fq)
    rhs = b - apply_A(g0)
    rhs[fixed] = 0.0

    def apply_free(x):
        v = x.reshape(mesh.node_count, 2).copy()
        v[fixed] = 0.0
        out = apply_A(v)
        out[fixed] = 0.0
        return out.ravel()

    precond_diag = diag.copy()
    precond_diag[fixed] = 1.0
    x, info = optim.pcg(
        apply_free,
        rhs.ravel(),
        rtol=tol,
        precond=lambda r: r / precond_diag.ravel(),
    )
    if not info.converged:
        raise NotConverged(f"domain CG residual {info.residual_norm:.3e}")
    g = g0 + x.reshape(mesh.node_count, 2) * free[:, None]
    D = mesh.gradient_at_quadrature(g).reshape(-1, 4)
    energy = mesh.quad_weights[0] * float(np.einsum("ma,mab,mb->", D, Lq, D))
    if load.force is not None:
        gv = mesh.value_at_quadrature(g)
        energy -= mesh.integrate(gv @ load.force)
    return energy, g


# ---------------------------------------------------------------------------
# nonlinear functionals (I_eps_h and I_h_hom)
# ---------------------------------------------------------------------------


def _minimize_field_energy(mesh, load, eval_wgrad, h, tol, g_start=None, max_iter=2000):
    """Minimize (1/h^2) sum w W(...) - int f.g over the free nodes.

    eval_wgrad(Fp) -> (W values, dW values) at the quadrature points with
    Fp = Id + h grad g.
    """
    fixed = mesh.boundary_mask
    free_idx = np.flatnonzero(~fixed)
    g0 = boundary_values(mesh, load)
    w0 = mesh.quad_weights[0]
    I = np.eye(2)
    force = load.force

    def assemble(xfree):
        g = g0.copy()
        g.reshape(-1, 2)[free_idx] = xfree.reshape(-1, 2)
        return g

    def fg(xfree):
        g = assemble(xfree)
        D = mesh.gradient_at_quadrature(g)
        Wv, dW = eval_wgrad(I[None] + h * D)
        e = w0 * float(np.sum(Wv)) / h**2
        grad = mesh.scatter_gradient((w0 / h) * dW)
        if force is not None:
            gv = mesh.value_at_quadrature(g)
            e -= mesh.integrate(gv @ force)
            fq = np.broadcast_to(force, (len(mesh.quad_points), 2))
            grad -= mesh.scatter_value(mesh.quad_weights[:, None] * fq)
        return e, grad.reshape(-1, 2)[free_idx].ravel()

    x0 = (
        np.zeros(2 * len(free_idx))
        if g_start is None
        else g_start.reshape(-1, 2)[free_idx].ravel()
    )
    f0, gr0 = fg(x0)
    gtol = tol * max(1.0, float(np.max(np.abs(gr0))) if gr0.size else 0.0)
    r = optim.minimize_lbfgs(fg, x0, gtol=gtol, max_iter=max_iter)
    # a line-search stall within a few decades of the tolerance is the
    # round-off floor of the (1/h^2)-scaled energy, not a failure
    if not r.converged and r.grad_norm > 1e3 * gtol:
        raise NotConverged(f"domain quasi-Newton stalled (|g|={r.grad_norm:.2e})")
    return r.f, assemble(r.x)


class KCellSurrogate:
    """Tabulated/callable surrogate for the k-cell homogenized integrand.

    Queries are answered by a nonlinear cell solve warm-started from the
    linear correctors and memoized on the 12-digit rounded deformation
    gradient; the gradient is the envelope derivative at the converged
    corrector, so value and gradient stay consistent.
    """

    def __init__(self, W: Density, k: int = 1, res: int = 16, tol: float = 1e-9):
        self.W = W
        self.grid = PeriodicGrid(W.dim, k, res)
        self.tol = tol
        self.hom = homogenized_tensor(W.quadratic_term(), self.grid)
        self._bound = W.bind(self.grid.quad_points)
        self._cache: dict = {}
        self.n_solves = 0

    @property
    def L_hom(self) -> SymTensor4:
        return self.hom.L_hom

    def _solve_one(self, F: np.ndarray):
        warm = self.hom.corrector_for(F - np.eye(self.W.dim))
        res = solve_nonlinear_cell(
            self.W,
            F,
            self.grid,
            starts=[("warm", warm.values), ("zero", np.zeros_like(warm.values))],
            tol=self.tol,
        )
        self.n_solves += 1
        D = self.grid.gradient_at_quadrature(res.corrector.values)
        dW, _ = self._bound.grad_density(F[None] + D)
        w0 = self.grid.quad_weights[0]
        grad = w0 * dW.sum(axis=0) / self.grid.k**self.W.dim
        return res.energy, grad

    def value_grad(self, F_batch: np.ndarray):
        F_batch = np.asarray(F_batch, dtype=float)
        m = F_batch.shape[0]
        vals = np.empty(m)
        grads = np.empty((m, 2, 2))
        keys = np.round(F_batch, 12)
        for i in range(m):
            key = keys[i].tobytes()
            hit = self._cache.get(key)
            if hit is None:
                hit = self._solve_one(F_batch[i])
                self._cache[key] = hit
            vals[i], grads[i] = hit
        return vals, grads


def minimize_functional(
    which: str,
    *,
    mesh: DomainMesh,
    load: Load,
    density: Density | None = None,
    quad_field: QuadraticField | None = None,
    surrogate: KCellSurrogate | None = None,
    L_hom: SymTensor4 | None = None,
    eps: float | None = None,
    h: float | None = None,
    tol: float = 1e-9,
    g_start: np.ndarray | None = None,
):
    """Minimize one of the four diagram functionals; returns (energy, field).

    which = "eps_h"   : (1/h^2) int W(x/eps, Id + h grad g)      [density]
    which = "lin_eps" : int Q(x/eps, grad g)                     [quad_field]
    which = "h_hom"   : (1/h^2) int W_hom(Id + h grad g)         [surrogate]
    which = "I0"      : int Q1_hom(grad g)                       [L_hom]

    Fields vanish on gamma structurally (the discrete space only contains
    admissible fields); the load makes the problem non-trivial.
    """
    load = load.validated(mesh)
    if which == "lin_eps":
        if quad_field is None or eps is None:
            raise ValueError("lin_eps needs quad_field and eps")
        Lq = quad_field.tensor_at(mesh.quad_points / eps)
        return _solve_quadratic(mesh, Lq, load, tol)
    if which == "I0":
        if L_hom is None:
            raise ValueError("I0 needs L_hom")
        Lq = np.broadcast_to(L_hom.coeff, (len(mesh.quad_points), 4, 4))
        return _solve_quadratic(mesh, Lq, load, tol)
    if which == "eps_h":
        if density is None or eps is None or h is None:
            raise ValueError("eps_h needs density, eps and h")
        bound = density.bind(mesh.quad_points / eps)

        def eval_wgrad(Fp):
            Wv = bound.energy_density(Fp)
            dW, _ = bound.grad_density(Fp)
            return Wv, dW

        if g_start is None:
            Lq = density.quadratic_term().tensor_at(mesh.quad_points / eps)
            _, g_start = _solve_quadratic(mesh, Lq, load, tol)
        return _minimize_field_energy(mesh, load, eval_wgrad, h, tol, g_start)
    if which == "h_hom":
        if surrogate is None or h is None:
            raise ValueError("h_hom needs surrogate and h")
        return _minimize_h_hom(mesh, load, surrogate, h, tol)
    raise ValueError(f"unknown functional {which!r}")


def _minimize_h_hom(mesh, load, surrogate: KCellSurrogate, h, tol, max_newton=8):
    """Gauss-Newton minimization of the homogenized-integrand functional.

    Starts from the quadratic (L_hom) minimizer and corrects with the
    homogenized stiffness as a fixed metric; each gradient evaluation costs
    one (memoized) cell solve per distinct deformation gradient.
    """
    Lq = np.broadcast_to(surrogate.L_hom.coeff, (len(mesh.quad_points), 4, 4))
    _, g = _solve_quadratic(mesh, Lq, load, tol)
    apply_A, diag = _domain_quadratic_operator(mesh, Lq)
    fixed = mesh.boundary_mask
    w0 = mesh.quad_weights[0]
    I = np.eye(2)
    force = load.force

    def energy_grad(gf):
        D = mesh.gradient_at_quadrature(gf)
        Wv, dW = surrogate.value_grad((I[None] + h * D).reshape(-1, 2, 2))
        e = w0 * float(np.sum(Wv)) / h**2
        grad = mesh.scatter_gradient((w0 / h) * dW.reshape(-1, 2, 2))
        if force is not None:
            gv = mesh.value_at_quadrature(gf)
            e -= mesh.integrate(gv @ force)
            fq = np.broadcast_to(force, (len(mesh.quad_points), 2))
            grad -= mesh.scatter_value(mesh.quad_weights[:, None] * fq)
        grad[fixed] = 0.0
        return e, grad

    e, grad = energy_grad(g)
    for _ in range(max_newton):
        gn = float(np.max(np.abs(grad)))
        if gn <= tol * 10.0:
            break

        def apply_free(x):
            v = x.reshape(mesh.node_count, 2).copy()
            v[fixed] = 0.0
            out = apply_A(v)
            out[fixed] = 0.0
            return out.ravel()

        pd = diag.copy()
        pd[fixed] = 1.0
        d, info = optim.pcg(
            apply_free, -0.5 * grad.ravel(), rtol=1e-10, precond=lambda r: r / pd.ravel()
        )
        step = d.reshape(mesh.node_count, 2)
        step[fixed] = 0.0
        # backtrack on the true energy
        t = 1.0
        for _ in range(20):
            e_new, grad_new = energy_grad(g + t * step)
            if e_new <= e + 1e-14 * max(1.0, abs(e)):
                break
            t *= 0.5
        else:
            break
        if abs(e - e_new) <= 1e-13 * max(1.0, abs(e)):
            g, e, grad = g + t * step, e_new, grad_new
            break
        g, e, grad = g + t * step, e_new, grad_new
    return e, g


# ---------------------------------------------------------------------------
# boundary seminorm and equi-coercivity
# ---------------------------------------------------------------------------


def gamma_seminorm(F, mesh: DomainMesh) -> float:
    """min_b int_gamma |F x - b|^2 dH^1(x) by discrete surface quadrature.

    The minimizing b is the surface mean of F x; 2-point Gauss per edge
    segment integrates the quadratic integrand exactly.
    """
    F = np.asarray(F, dtype=float)
    a, b = mesh.gamma_segments()
    g0, g1 = _GAUSS_1D
    pts = np.concatenate([a + g0 * (b - a), a + g1 * (b - a)], axis=0)
    seg_len = np.linalg.norm(b - a, axis=1)
    w = 0.5 * np.concatenate([seg_len, seg_len])
    Fx = pts @ F.T
    total = w.sum()
    bbar = (w[:, None] * Fx).sum(axis=0) / total
    return float(np.sum(w * np.sum((Fx - bbar) ** 2, axis=1)))


def sample_admissible_fields(mesh: DomainMesh, n_samples: int, seed: int = 0):
    """Random smooth fields vanishing on gamma (sin modes in the normal
    coordinate), unit-free amplitudes."""
    rng = np.random.default_rng(seed)
    coords = mesh.node_coords()
    t = {"left": coords[:, 0], "right": 1 - coords[:, 0],
         "bottom": coords[:, 1], "top": 1 - coords[:, 1]}[mesh.gamma]
    u = coords[:, 1] if mesh.gamma in ("left", "right") else coords[:, 0]
    out = []
    for _ in range(n_samples):
        g = np.zeros((mesh.node_count, 2))
        for j in range(1, 4):
            amp = rng.normal(size=(2, 2)) / j
            g += np.outer(np.sin(np.pi * j * t), amp[0])
            g += np.outer(np.sin(np.pi * j * t) * np.cos(np.pi * j * u), amp[1])
        out.append(g)
    return out


def equicoercivity_probe(
    W: Density,
    mesh: DomainMesh,
    h_list,
    n_samples: int = 8,
    eps: float = 0.5,
    seed: int = 0,
):
    """Smallest observed ratio I^{eps,h}(g) / ||g||_{W^{1,2}}^2 over random
    admissible g and h in h_list; the h-wise minima probe uniformity in h."""
    fields = sample_admissible_fields(mesh, n_samples, seed)
    bound = W.bind(mesh.quad_points / eps)
    I = np.eye(2)
    per_h = {}
    for h in h_list:
        ratios = []
        for g in fields:
            D = mesh.gradient_at_quadrature(g)
            e = mesh.integrate(bound.energy_density(I[None] + h * D)) / h**2
            gv = mesh.value_at_quadrature(g)
            norm2 = mesh.integrate(np.sum(gv**2, axis=1)) + mesh.integrate(
                np.sum(D**2, axis=(1, 2))
            )
            ratios.append(e / norm2)
        per_h[h] = float(np.min(ratios))
    return {"c1": min(per_h.values()), "per_h": per_h, "eps": eps, "samples": n_samples}


# ---------------------------------------------------------------------------
# the commutativity diagram probe
# ---------------------------------------------------------------------------


@dataclass
class DiagramReport:
    eps_list: list
    h_list: list
    path13_rows: list  # dicts: path, eps, h, energy, converged
    path24_rows: list
    lin_eps: dict      # eps -> min I_lin^eps
    I0_value: float
    limit13: float
    limit24: float
    defect: float
    defect_rel: float
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "eps_list": list(self.eps_list),
            "h_list": list(self.h_list),
            "path13_rows": self.path13_rows,
            "path24_rows": self.path24_rows,
            "lin_eps": {str(k): v for k, v in self.lin_eps.items()},
            "I0_value": self.I0_value,
            "limit13": self.limit13,
            "limit24": self.limit24,
            "defect": self.defect,
            "defect_rel": self.defect_rel,
            "config": self.config,
        }

    def csv_rows(self):
        rows = [("path", "eps", "h", "energy", "converged")]
        for r in self.path13_rows + self.path24_rows:
            rows.append((r["path"], r["eps"], r["h"], repr(r["energy"]), r["converged"]))
        return rows


def richardson(x_desc, E, order: int = 1) -> float:
    """First-order Richardson extrapolation from the final two grid values.

    x_desc is the decreasing parameter list; E the matching values.  With
    E(x) ~ E0 + c x^order the pair (x1, x2), x2 < x1, gives
    E0 = (x1^p E2 - x2^p E1) / (x1^p - x2^p).
    """
    x1, x2 = float(x_desc[-2]) ** order, float(x_desc[-1]) ** order
    E1, E2 = float(E[-2]), float(E[-1])
    return (x1 * E2 - x2 * E1) / (x1 - x2)


def diagram_probe(
    W: Density,
    load: Load,
    eps_list,
    h_list,
    mesh: DomainMesh,
    tol: float = 1e-9,
    surrogate_k: int = 1,
    surrogate_res: int | None = None,
) -> DiagramReport:
    """Minimal energies along the two limit paths of the diagram.

    Path (1)->(3): h -> 0 at fixed eps (extrapolated), then eps -> 0.
    Path (2)->(4): eps -> 0 at fixed h, realized by the k-cell homogenized
    surrogate, then h -> 0.  Both limits use first-order Richardson on the
    final two grid values; the commutation defect is their difference.
    """
    eps_list = sorted(eps_list, reverse=True)
    h_list = sorted(h_list, reverse=True)
    load = load.validated(mesh)
    surrogate = KCellSurrogate(
        W, k=surrogate_k, res=surrogate_res or mesh.res, tol=max(tol, 1e-10)
    )
    Q = W.quadratic_term()

    path13 = []
    T_eps = []
    lin_vals = {}
    for eps in eps_list:
        energies = []
        for h in h_list:
            e, _ = minimize_functional(
                "eps_h", mesh=mesh, load=load, density=W, eps=eps, h=h, tol=tol
            )
            path13.append(
                {"path": "13", "eps": eps, "h": h, "energy": e, "converged": True}
            )
            energies.append(e)
        e_lin, _ = minimize_functional(
            "lin_eps", mesh=mesh, load=load, quad_field=Q, eps=eps, tol=tol
        )
        lin_vals[eps] = e_lin
        T_eps.append(richardson(h_list, energies) if len(h_list) > 1 else energies[-1])
    limit13 = richardson(eps_list, T_eps) if len(eps_list) > 1 else T_eps[-1]

    path24 = []
    energies24 = []
    for h in h_list:
        e, _ = minimize_functional(
            "h_hom", mesh=mesh, load=load, surrogate=surrogate, h=h, tol=tol
        )
        path24.append(
            {"path": "24", "eps": 0.0, "h": h, "energy": e, "converged": True}
        )
        energies24.append(e)
    limit24 = richardson(h_list, energies24) if len(h_list) > 1 else energies24[-1]
    e_I0, _ = minimize_functional(
        "I0", mesh=mesh, load=load, L_hom=surrogate.L_hom, tol=tol
    )

    defect = abs(limit13 - limit24)
    scale = max(abs(limit13), abs(limit24), 1e-300)
    return DiagramReport(
        eps_list=eps_list,
        h_list=h_list,
        path13_rows=path13,
        path24_rows=path24,
        lin_eps=lin_vals,
        I0_value=e_I0,
        limit13=limit13,
        limit24=limit24,
        defect=defect,
        defect_rel=defect / scale,
        config={
            "mesh_res": mesh.res,
            "gamma": mesh.gamma,
            "surrogate_k": surrogate_k,
            "surrogate_res": surrogate_res or mesh.res,
            "density": W.label(),
        },
    )
