import numpy as np
import pytest

from elhom import tensors as T
from elhom.densities import (
    Density,
    QuadraticField,
    two_phase_laminate_field,
    validate_class,
)
from elhom.errors import NotExpandable


def random_rotation(rng, n):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


class TestEval:
    def test_natural_state(self):
        for base in ("dist2", "stvk"):
            for micro, dim in (("homogeneous", 2), ("layered", 2)):
                W = Density(base, micro, dim, alpha=0.3)
                y = np.array([0.2, 0.7][:dim])
                assert W.eval(y, np.eye(dim)) == pytest.approx(0.0, abs=1e-15)

    def test_layered_soft_phase_scaling(self):
        W = Density("dist2", "layered", 2, alpha=0.1)
        y_soft = np.array([0.3, 0.7])  # chi = 0
        F = np.diag([2.0, 1.0])  # dist2 = 1
        assert W.eval(y_soft, F) == pytest.approx(0.1)
        y_stiff = np.array([0.3, 0.2])
        assert W.eval(y_stiff, F) == pytest.approx(1.0)

    def test_prestressed_regions(self):
        W = Density("stvk", "prestressed_perforated", 3, s=0.3, rho=0.15)
        y_void = np.array([0.1, 0.1, 0.55])
        assert W.eval(y_void, np.diag([3.0, 1.0, 1.0])) == 0.0
        y_rod = np.array([0.4, 0.5, 0.75])
        assert W.eval(y_rod, np.eye(3)) > 0.0  # prestress
        # stress-free rod state F = S^{-1}
        Sinv = np.eye(3)
        Sinv[0, 0] = 1.0 + W.s
        assert W.eval(y_rod, Sinv) == pytest.approx(0.0, abs=1e-14)
        y_stiff = np.array([0.4, 0.5, 0.25])
        assert W.eval(y_stiff, np.eye(3)) == 0.0

    @pytest.mark.parametrize("base", ["dist2", "stvk"])
    def test_frame_indifference(self, base):
        rng = np.random.default_rng(0)
        W = Density(base, "layered", 2, alpha=0.4)
        y = rng.uniform(0, 1, size=(30, 2))
        F = np.eye(2) + 0.4 * rng.normal(size=(30, 2, 2))
        w0 = W.eval(y, F)
        for _ in range(4):
            R = random_rotation(rng, 2)
            w1 = W.eval(y, R[None] @ F)
            assert np.max(np.abs(w1 - w0) / np.maximum(w0, 1e-12)) < 1e-10

    def test_periodicity(self):
        rng = np.random.default_rng(1)
        for W in (
            Density("dist2", "layered", 2, alpha=0.2),
            Density("stvk", "prestressed_perforated", 3),
        ):
            y = rng.uniform(0, 1, size=(20, W.dim))
            F = np.eye(W.dim) + 0.2 * rng.normal(size=(20, W.dim, W.dim))
            z = rng.integers(-3, 4, size=(20, W.dim)).astype(float)
            assert np.allclose(W.eval(y, F), W.eval(y + z, F))


class TestGrad:
    @pytest.mark.parametrize("base", ["dist2", "stvk"])
    @pytest.mark.parametrize("dim", [2, 3])
    def test_matches_finite_differences(self, base, dim):
        rng = np.random.default_rng(2)
        W = Density(base, "homogeneous", dim)
        F = np.eye(dim) + 0.3 * rng.normal(size=(60, dim, dim))
        F = F[T.det(F) > 0.25][:40]
        y = rng.uniform(0, 1, size=(len(F), dim))
        g = W.grad_F(y, F)
        h = 1e-5
        for a in range(dim):
            for b in range(dim):
                E = np.zeros((dim, dim))
                E[a, b] = 1.0
                fd = (W.eval(y, F + h * E) - W.eval(y, F - h * E)) / (2 * h)
                rel = np.abs(fd - g[:, a, b]) / np.maximum(np.abs(fd), 1e-6)
                assert np.max(rel) < 1e-6

    def test_minima_have_zero_gradient(self):
        for base in ("dist2", "stvk"):
            W = Density(base, "homogeneous", 2)
            g = W.grad_F(np.zeros(2), np.eye(2))
            assert np.allclose(g, 0.0, atol=1e-12)

    def test_nonsmooth_flag_dist2(self):
        W = Density("dist2", "homogeneous", 2)
        _, flag = W.grad_F(np.zeros(2), np.diag([1.0, -0.5]), return_flag=True)
        assert flag
        _, flag = W.grad_F(np.zeros(2), np.eye(2), return_flag=True)
        assert not flag

    def test_rod_chain_rule(self):
        rng = np.random.default_rng(3)
        W = Density("stvk", "prestressed_rod", 3, s=0.3, rho=0.15)
        y = np.tile([0.4, 0.5, 0.75], (10, 1))
        F = np.eye(3) + 0.1 * rng.normal(size=(10, 3, 3))
        g = W.grad_F(y, F)
        h = 1e-6
        E = np.zeros((3, 3))
        E[0, 0] = 1.0
        fd = (W.eval(y, F + h * E) - W.eval(y, F - h * E)) / (2 * h)
        assert np.max(np.abs(fd - g[:, 0, 0])) < 1e-5


class TestQuadraticTerm:
    def test_stvk_is_sym_norm_squared(self):
        rng = np.random.default_rng(4)
        Q = Density("stvk", "homogeneous", 2).quadratic_term()
        G = rng.normal(size=(20, 2, 2))
        y = rng.uniform(0, 1, size=(20, 2))
        assert np.allclose(Q.quad(y, G), T.frob(T.sym(G)) ** 2)

    def test_stvk_h2_coefficient_oracle(self):
        # symbolic expansion of |(Id+hG)^T(Id+hG) - Id|^2/4: the h^2
        # coefficient is |sym G|^2
        rng = np.random.default_rng(5)
        W = Density("stvk", "homogeneous", 2)
        G = rng.normal(size=(2, 2))
        vals = []
        for h in (1e-3, 5e-4):
            vals.append(W.eval(np.zeros(2), np.eye(2) + h * G) / h**2)
        target = float(T.frob(T.sym(G)) ** 2)
        assert vals[1] == pytest.approx(target, rel=1e-2)

    def test_dist2_fd_tensor_matches_sym_projector(self):
        Q = Density("dist2", "homogeneous", 3).quadratic_term()
        assert np.max(np.abs(Q.L0.coeff - T.SymTensor4.sym_projector(3).coeff)) < 1e-6

    def test_layered_scalar_factor_passes_through(self):
        rng = np.random.default_rng(6)
        alpha = 0.37
        Q = Density("stvk", "layered", 2, alpha=alpha).quadratic_term()
        G = rng.normal(size=(2, 2))
        s2 = float(T.frob(T.sym(G)) ** 2)
        assert Q.quad(np.array([0.1, 0.2]), G) == pytest.approx(s2)
        assert Q.quad(np.array([0.1, 0.7]), G) == pytest.approx(alpha * s2)

    def test_skew_directions_vanish(self):
        K = np.array([[0.0, 1.0], [-1.0, 0.0]])
        for base in ("dist2", "stvk"):
            Q = Density(base, "homogeneous", 2).quadratic_term()
            assert Q.quad(np.zeros(2), K) == pytest.approx(0.0, abs=1e-6)

    def test_prestressed_not_expandable(self):
        with pytest.raises(NotExpandable):
            Density("stvk", "prestressed_perforated", 3).quadratic_term()

    def test_consistency_with_density(self):
        # |W(y, Id+hG) - Q(y, hG)| / h^2 -> 0 uniformly over samples
        rng = np.random.default_rng(7)
        for W in (
            Density("dist2", "layered", 2, alpha=0.5),
            Density("stvk", "layered", 2, alpha=0.5),
        ):
            Q = W.quadratic_term()
            G = rng.normal(size=(100, 2, 2))
            G /= T.frob(G)[:, None, None]
            y = rng.uniform(0, 1, size=(100, 2))
            prev = None
            for h in (1e-1, 1e-2, 1e-3):
                w = W.eval(y, np.eye(2) + h * G)
                q = Q.quad(y, h * G)
                resid = np.max(np.abs(w - q)) / h**2
                if prev is not None:
                    assert resid < prev
                prev = resid

    def test_field_periodicity(self):
        rng = np.random.default_rng(8)
        Q = two_phase_laminate_field(0.3)
        y = rng.uniform(0, 1, size=(20, 2))
        z = rng.integers(-2, 3, size=(20, 2)).astype(float)
        assert np.allclose(Q.weight_at(y), Q.weight_at(y + z))

    def test_sampled_tensors_psd(self):
        Q = two_phase_laminate_field(0.3)
        Ls = Q.tensor_at(np.array([[0.1, 0.2], [0.1, 0.8]]))
        for L in Ls:
            assert np.linalg.eigvalsh(0.5 * (L + L.T)).min() >= -1e-12


class TestValidateClass:
    def test_dist2_homogeneous_all_pass_with_a_one(self):
        r = validate_class(Density("dist2", "homogeneous", 2), 200, 0)
        assert r.all_passed
        assert r.condition("W3").fitted["a_fitted"] == pytest.approx(1.0, rel=1e-9)

    def test_layered_alpha_one_collapses_to_homogeneous(self):
        r = validate_class(Density("dist2", "layered", 2, alpha=1.0), 200, 0)
        assert r.all_passed

    def test_prestressed_fails_w2_w3(self):
        r = validate_class(Density("stvk", "prestressed_perforated", 3), 200, 0)
        assert not r.condition("W2").passed
        assert not r.condition("W3").passed

    def test_stvk_reflection_defect_reported(self):
        # the dist^2 lower bound genuinely fails near reflections
        r = validate_class(Density("stvk", "homogeneous", 2), 200, 0)
        assert not r.condition("W3").passed
        assert r.condition("W2").passed and r.condition("W4").passed

    def test_report_roundtrip(self):
        r = validate_class(Density("dist2", "layered", 2, alpha=0.5), 100, 1)
        d = r.to_dict()
        assert d["all_passed"] is True
        assert {c["name"] for c in d["conditions"]} == {"W1", "W2", "W3", "W4"}
