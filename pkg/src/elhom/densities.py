"""Stored-energy densities W(y, F) and their quadratic terms.

Two base energies are provided:

* ``dist2``  -- W0(F) = dist^2(F, SO(n)); quadratic growth (p = 2), satisfies
  the dist^2 lower bound with constant 1, but is only C^1 away from det F = 0.
* ``stvk``   -- W0(F) = |F^T F - Id|^2 / 4; smooth with quartic growth (p = 4).
  Near reflections the dist^2 lower bound genuinely fails (the classical
  St. Venant-Kirchhoff defect), which the validator reports honestly.

Microstructures (all 1-periodic in y):

* ``homogeneous``
* ``layered(alpha)``             -- stiff slab {y2 mod 1 < 1/2}, soft matrix
  scaled by alpha (2D composite of the buckling counterexample).
* ``prestressed_perforated(s, rho)`` -- 3D: stiff slab Y0 = {y3 mod 1 < 1/2}
  with W0(F), a cylinder of radius rho along e1 centered at (y2, y3) =
  (1/2, 3/4) with the prestressed energy W0(F S), S = (Id + s e1 x e1)^{-1},
  and void elsewhere.
* ``prestressed_stiff`` / ``prestressed_rod`` -- the two components alone
  (restricted supports used by the splitting identity).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensors
from .errors import NotExpandable
from .tensors import SymTensor4

BASES = ("dist2", "stvk")
MICROSTRUCTURES = (
    "homogeneous",
    "layered",
    "prestressed_perforated",
    "prestressed_stiff",
    "prestressed_rod",
)

HESSIAN_FD_STEP = 1e-4


# ---------------------------------------------------------------------------
# base energies, batched over (..., n, n)
# ---------------------------------------------------------------------------


def _w0_dist2(F):
    return tensors.dist2_SO(F)


def _w0_dist2_grad(F):
    R = tensors.polar_rotation(F)
    return 2.0 * (F - R), tensors.det(F) <= 0.0


def _w0_stvk(F):
    C = np.swapaxes(F, -1, -2) @ F
    E = C - np.eye(F.shape[-1])
    return 0.25 * np.einsum("...ij,...ij->...", E, E)


def _w0_stvk_grad(F):
    C = np.swapaxes(F, -1, -2) @ F
    E = C - np.eye(F.shape[-1])
    return F @ E, np.zeros(F.shape[:-2], dtype=bool)


def _w0_dist2_both(F):
    d2, R = tensors.dist2_and_polar(F)
    return d2, 2.0 * (F - R)


def _w0_stvk_both(F):
    C = np.swapaxes(F, -1, -2) @ F
    E = C - np.eye(F.shape[-1])
    return 0.25 * np.einsum("...ij,...ij->...", E, E), F @ E


_BASE_EVAL = {"dist2": _w0_dist2, "stvk": _w0_stvk}
_BASE_GRAD = {"dist2": _w0_dist2_grad, "stvk": _w0_stvk_grad}
_BASE_BOTH = {"dist2": _w0_dist2_both, "stvk": _w0_stvk_both}


@dataclass(frozen=True)
class Density:
    """A microstructure-aware stored-energy density of the catalog."""

    base: str = "dist2"
    microstructure: str = "homogeneous"
    dim: int = 2
    alpha: float = 1.0
    s: float = 0.3
    rho: float = 0.15

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"unknown base {self.base!r}")
        if self.microstructure not in MICROSTRUCTURES:
            raise ValueError(f"unknown microstructure {self.microstructure!r}")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.microstructure == "layered" and not self.alpha > 0.0:
            raise ValueError("layered composite needs alpha > 0")
        if self.microstructure.startswith("prestressed"):
            if self.dim != 3:
                raise ValueError("prestressed microstructures are 3D")
            if not 0.0 < self.s < 0.5:
                raise ValueError("prestress s must lie in (0, 1/2)")
            if not 0.0 < self.rho < 0.25:
                raise ValueError("cylinder radius rho must lie in (0, 1/4)")

    # -- metadata ----------------------------------------------------------

    @property
    def growth_p(self) -> float:
        return 2.0 if self.base == "dist2" else 4.0

    @property
    def coercivity_a(self) -> float:
        # dist2 realizes (W3) with constant 1; scaled phases weaken it by
        # the smallest weight.
        if self.microstructure == "layered":
            return max(1.0, 1.0 / self.alpha)
        return 1.0

    @property
    def prestress_S(self) -> np.ndarray:
        S = np.eye(3)
        S[0, 0] = 1.0 / (1.0 + self.s)
        return S

    @property
    def has_void(self) -> bool:
        return self.microstructure.startswith("prestressed")

    @property
    def is_class_candidate(self) -> bool:
        """Whether (W2) can hold at all (prestressed components violate it)."""
        return self.microstructure in ("homogeneous", "layered")

    # -- microstructure geometry -------------------------------------------

    def layered_weight(self, y) -> np.ndarray:
        yf = np.mod(np.asarray(y, dtype=float)[..., 1], 1.0)
        return np.where(yf < 0.5, 1.0, self.alpha)

    def region_masks(self, y):
        """(stiff, rod) boolean masks of the perforated composite."""
        yf = np.mod(np.asarray(y, dtype=float), 1.0)
        stiff = yf[..., 2] < 0.5
        rod = (yf[..., 1] - 0.5) ** 2 + (yf[..., 2] - 0.75) ** 2 <= self.rho**2
        return stiff, rod

    # -- evaluation ---------------------------------------------------------

    def eval(self, y, F):
        """W(y, F), batched; y has shape (..., n), F has shape (..., n, n)."""
        return self.bind(y).energy_density(np.asarray(F, dtype=float))

    def grad_F(self, y, F, return_flag=False):
        """dW/dF; for the dist2 base a subgradient element is returned at
        nonsmooth points (det <= 0) together with a flag mask."""
        g, flag = self.bind(y).grad_density(np.asarray(F, dtype=float))
        if return_flag:
            return g, flag
        return g

    def bind(self, y) -> "BoundDensity":
        """Precompute the microstructure layout at fixed sample points."""
        return BoundDensity(self, np.asarray(y, dtype=float))

    # -- quadratic term -----------------------------------------------------

    def base_quadratic_tensor(self) -> SymTensor4:
        """(1/2) D^2 W0(Id) as a SymTensor4.

        Analytic for stvk (the sym projector); second-order central
        differences with step 1e-4 otherwise.
        """
        if self.base == "stvk":
            return SymTensor4.sym_projector(self.dim)
        n = self.dim
        w0 = _BASE_EVAL[self.base]
        h = HESSIAN_FD_STEP
        m = n * n
        H = np.zeros((m, m))
        basis = [np.zeros((n, n)) for _ in range(m)]
        for a in range(m):
            basis[a][a // n, a % n] = 1.0
        I = np.eye(n)
        for a in range(m):
            for b in range(a, m):
                Ea, Eb = basis[a], basis[b]
                val = (
                    w0(I + h * Ea + h * Eb)
                    - w0(I + h * Ea - h * Eb)
                    - w0(I - h * Ea + h * Eb)
                    + w0(I - h * Ea - h * Eb)
                ) / (4.0 * h * h)
                H[a, b] = H[b, a] = val
        return SymTensor4(0.5 * H, n=n, psd=True)

    def quadratic_term(self) -> "QuadraticField":
        """The (W4) quadratic term y -> (1/2) D^2 W(y, Id) as a field."""
        if not self.is_class_candidate:
            raise NotExpandable(
                "prestressed component is not stress free at the identity"
            )
        L0 = self.base_quadratic_tensor()
        if self.microstructure == "homogeneous":
            return QuadraticField(L0, dim=self.dim)
        return QuadraticField(
            L0,
            dim=self.dim,
            weight=self.layered_weight,
            bound_c=float(np.linalg.eigvalsh(L0.coeff).max()),
        )

    def label(self) -> str:
        bits = [self.base, self.microstructure]
        if self.microstructure == "layered":
            bits.append(f"alpha={self.alpha:g}")
        if self.microstructure.startswith("prestressed"):
            bits.append(f"s={self.s:g},rho={self.rho:g}")
        return " ".join(bits)


class BoundDensity:
    """Density with the microstructure resolved at fixed points y.

    Solvers bind once per grid and then evaluate many deformation states;
    only the F-dependent part is recomputed.
    """

    def __init__(self, density: Density, y: np.ndarray):
        self.density = density
        self.y = y
        self.n = density.dim
        self._w0 = _BASE_EVAL[density.base]
        self._dw0 = _BASE_GRAD[density.base]
        self._w0_both = _BASE_BOTH[density.base]
        micro = density.microstructure
        if micro in ("homogeneous", "layered"):
            self.mode = "scaled"
            if micro == "homogeneous":
                self.weights = np.ones(y.shape[:-1])
            else:
                self.weights = density.layered_weight(y)
        else:
            self.mode = "regions"
            stiff, rod = density.region_masks(y)
            if micro == "prestressed_stiff":
                rod = np.zeros_like(rod)
            elif micro == "prestressed_rod":
                stiff = np.zeros_like(stiff)
            else:
                stiff = stiff & ~rod  # disjoint by geometry; keep exact
            self.idx_stiff = np.flatnonzero(stiff.ravel())
            self.idx_rod = np.flatnonzero(rod.ravel())
            self.S = density.prestress_S

    @property
    def needs_det_guard(self) -> bool:
        return self.density.base == "dist2"

    def material_fraction(self) -> float:
        if self.mode == "scaled":
            return 1.0
        total = np.prod(self.y.shape[:-1])
        return (len(self.idx_stiff) + len(self.idx_rod)) / max(total, 1)

    def energy_density(self, F) -> np.ndarray:
        batch = F.shape[:-2]
        if self.mode == "scaled":
            return self.weights * self._w0(F)
        flat = F.reshape((-1, self.n, self.n))
        out = np.zeros(flat.shape[0])
        if len(self.idx_stiff):
            out[self.idx_stiff] = self._w0(flat[self.idx_stiff])
        if len(self.idx_rod):
            out[self.idx_rod] = self._w0(flat[self.idx_rod] @ self.S)
        return out.reshape(batch)

    def grad_density(self, F):
        batch = F.shape[:-2]
        if self.mode == "scaled":
            g, flag = self._dw0(F)
            return self.weights[..., None, None] * g, flag
        flat = F.reshape((-1, self.n, self.n))
        out = np.zeros_like(flat)
        flag = np.zeros(flat.shape[0], dtype=bool)
        if len(self.idx_stiff):
            g, fl = self._dw0(flat[self.idx_stiff])
            out[self.idx_stiff] = g
            flag[self.idx_stiff] = fl
        if len(self.idx_rod):
            g, fl = self._dw0(flat[self.idx_rod] @ self.S)
            out[self.idx_rod] = g @ self.S.T
            flag[self.idx_rod] = fl
        return out.reshape(batch + (self.n, self.n)), flag.reshape(batch)

    def energy_and_grad(self, F):
        """(W values, dW values) sharing one decomposition per point."""
        batch = F.shape[:-2]
        if self.mode == "scaled":
            e, g = self._w0_both(F)
            return self.weights * e, self.weights[..., None, None] * g
        flat = F.reshape((-1, self.n, self.n))
        ev = np.zeros(flat.shape[0])
        gv = np.zeros_like(flat)
        if len(self.idx_stiff):
            e, g = self._w0_both(flat[self.idx_stiff])
            ev[self.idx_stiff] = e
            gv[self.idx_stiff] = g
        if len(self.idx_rod):
            e, g = self._w0_both(flat[self.idx_rod] @ self.S)
            ev[self.idx_rod] = e
            gv[self.idx_rod] = g @ self.S.T
        return ev.reshape(batch), gv.reshape(batch + (self.n, self.n))

    def min_material_det(self, F) -> float:
        """Smallest det F over points carrying material (guard for dist2)."""
        d = tensors.det(F)
        if self.mode == "scaled":
            return float(d.min()) if d.size else np.inf
        flat = d.ravel()
        vals = []
        if len(self.idx_stiff):
            vals.append(flat[self.idx_stiff].min())
        if len(self.idx_rod):
            vals.append(flat[self.idx_rod].min())
        return float(min(vals)) if vals else np.inf


@dataclass
class QuadraticField:
    """Quadratic integrand Q(y, G) = <L(y) G, G> with L(y) = weight(y) * L0.

    All quadratic terms arising from the density catalog are scalar-weighted
    copies of a single base tensor; `weight` must be 1-periodic.
    """

    L0: SymTensor4
    dim: int = 2
    weight: Callable[[np.ndarray], np.ndarray] | None = None
    bound_c: float = field(default=0.0)

    def __post_init__(self):
        if self.bound_c <= 0.0:
            self.bound_c = float(np.linalg.eigvalsh(self.L0.coeff).max())

    def weight_at(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.weight is None:
            return np.ones(y.shape[:-1])
        return np.asarray(self.weight(y), dtype=float)

    def tensor_at(self, y) -> np.ndarray:
        """L(y) as an (..., n^2, n^2) array."""
        w = self.weight_at(y)
        return w[..., None, None] * self.L0.coeff

    def quad(self, y, G) -> np.ndarray:
        """Q(y, G), batched over matching leading shapes."""
        return self.weight_at(y) * self.L0.quad(G)

    def apply(self, y, G) -> np.ndarray:
        """L(y) G, batched."""
        return self.weight_at(y)[..., None, None] * self.L0.apply(G)


def two_phase_laminate_field(alpha: float, dim: int = 2) -> QuadraticField:
    """mu(y) |sym G|^2 with mu in {1, alpha} in layers normal to e2."""
    probe = Density(base="stvk", microstructure="layered", dim=dim, alpha=alpha)
    return QuadraticField(
        SymTensor4.sym_projector(dim), dim=dim, weight=probe.layered_weight
    )


# ---------------------------------------------------------------------------
# class-membership validation
# ---------------------------------------------------------------------------


@dataclass
class ConditionReport:
    name: str
    passed: bool
    fitted: dict
    note: str = ""

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "fitted": {k: _jsonable(v) for k, v in self.fitted.items()},
            "note": self.note,
        }


@dataclass
class ValidationReport:
    density: str
    sample_count: int
    seed: int
    conditions: list

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def condition(self, name: str) -> ConditionReport:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {
            "density": self.density,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "all_passed": self.all_passed,
            "conditions": [c.to_dict() for c in self.conditions],
        }


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


# pass thresholds for the fitted constants; (W1) has no quantitative claim,
# so only finiteness is enforced there.
W1_CAP = 1e8
W3_CAP = 1e3
W2_TOL = 1e-12


def validate_class(W: Density, sample_count: int = 200, seed: int = 0) -> ValidationReport:
    """Empirical check of the growth/nondegeneracy/expansion conditions.

    Randomized (y, F) samples plus a few deterministic probe matrices
    (rotations, near-reflections, large stretches).  The report carries the
    fitted constants; it never raises on violation.
    """
    rng = np.random.default_rng(seed)
    n = W.dim
    y = rng.uniform(0.0, 1.0, size=(sample_count, n))
    scales = np.asarray([0.05, 0.3, 0.8, 1.6])[rng.integers(0, 4, size=sample_count)]
    F = np.eye(n) + scales[:, None, None] * rng.normal(size=(sample_count, n, n))
    # deterministic probes: identity, rotations, stretch, near-reflection
    probes = [np.eye(n), 3.0 * np.eye(n)]
    th = 0.73
    R = np.eye(n)
    R[:2, :2] = [[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]
    probes.append(R)
    refl = np.eye(n)
    refl[n - 1, n - 1] = -0.99
    probes.append(refl)
    F = np.concatenate([F, np.stack(probes)], axis=0)
    y = np.concatenate([y, np.tile(y[:1], (len(probes), 1))], axis=0)
    m = F.shape[0]

    bound = W.bind(y)
    Wv = bound.energy_density(F)
    Fp = tensors.frob(F) ** W.growth_p

    conditions = []

    # (W1) p-growth sandwich and local p-Lipschitz bound, fitted constants.
    a_up = float(np.max(Wv / (1.0 + Fp)))
    a_low = float(np.max(0.5 * (-Wv + np.sqrt(Wv**2 + 4.0 * Fp))))
    pairs = rng.integers(0, m, size=(200, 2))
    Fa, Fb = F[pairs[:, 0]], F[pairs[:, 1]]
    ya = y[pairs[:, 0]]
    ba = W.bind(ya)
    dW = np.abs(ba.energy_density(Fa) - ba.energy_density(Fb))
    den = (
        1.0
        + tensors.frob(Fa) ** (W.growth_p - 1.0)
        + tensors.frob(Fb) ** (W.growth_p - 1.0)
    ) * np.maximum(tensors.frob(Fa - Fb), 1e-14)
    a_lip = float(np.max(dW / den))
    a1 = max(a_up, a_low, a_lip)
    w1_ok = np.isfinite(a1) and a1 < W1_CAP
    if W.has_void:
        # void annihilates the lower p-growth bound
        w1_ok = False
    conditions.append(
        ConditionReport(
            "W1",
            w1_ok,
            {"a_upper": a_up, "a_lower": a_low, "a_lipschitz": a_lip, "p": W.growth_p},
            note="void region breaks p-coercivity" if W.has_void else "",
        )
    )

    # (W2) natural state at the identity.
    Wid = bound.energy_density(np.broadcast_to(np.eye(n), (m, n, n)))
    w2_max = float(np.max(Wid))
    conditions.append(
        ConditionReport("W2", w2_max <= W2_TOL, {"max_W_at_identity": w2_max})
    )

    # (W3) dist^2 lower bound, fitted constant a with W >= dist^2 / a.
    d2 = tensors.dist2_SO(F)
    mask = d2 > 1e-8
    with np.errstate(divide="ignore"):
        ratios = np.where(Wv[mask] > 0.0, d2[mask] / np.maximum(Wv[mask], 1e-300), np.inf)
    a3 = float(np.max(ratios)) if mask.any() else 1.0
    conditions.append(
        ConditionReport(
            "W3",
            bool(np.isfinite(a3) and a3 <= W3_CAP),
            {"a_fitted": a3, "cap": W3_CAP},
        )
    )

    # (W4) quadratic expansion: residual decreasing over |G| in {1e-1..1e-3}.
    try:
        Q = W.quadratic_term()
    except NotExpandable as exc:
        conditions.append(
            ConditionReport("W4", False, {}, note=f"not expandable: {exc}")
        )
    else:
        G = rng.normal(size=(64, n, n))
        G /= tensors.frob(G)[:, None, None]
        yq = rng.uniform(0.0, 1.0, size=(64, n))
        bq = W.bind(yq)
        residuals = []
        for h in (1e-1, 1e-2, 1e-3):
            wv = bq.energy_density(np.eye(n) + h * G)
            qv = Q.quad(yq, h * G)
            residuals.append(float(np.max(np.abs(wv - qv)) / h**2))
        dec = all(residuals[i + 1] <= residuals[i] + 1e-12 for i in range(2))
        conditions.append(
            ConditionReport("W4", dec, {"residuals": residuals, "h": [1e-1, 1e-2, 1e-3]})
        )

    return ValidationReport(W.label(), sample_count, seed, conditions)
