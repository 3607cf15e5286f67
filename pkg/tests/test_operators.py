"""Inverse divergence, inverse curl, conserved functionals, Killing moments."""

import numpy as np
import pytest

from cilab import operators, spectral, synth
from cilab.errors import MeanNotZero, NotSolenoidal, SupportViolation
from cilab.fields import Grid, ScalarField, SupportBox, VectorField


def mean_free(v):
    comps = [c.data - c.data.mean(axis=(1, 2, 3), keepdims=True)
             for c in v.components]
    return VectorField(v.grid, comps)


class TestInverseDivergence:
    def test_zero(self, grid32):
        S = operators.inverse_divergence(VectorField.zeros(grid32))
        assert S.max_abs() == 0.0

    def test_single_mode_closed_form(self, grid32):
        # oracle: f = (sin x2, 0, 0) has S_12 = S_21 = -cos x2, see the
        # definition with invlap(cos x2) = -cos x2 and div f = 0
        f = VectorField.from_function(
            grid32, lambda a, b, c: (np.sin(b), np.zeros_like(a), np.zeros_like(a)))
        S = operators.inverse_divergence(f)
        want12 = ScalarField.from_function(grid32, lambda a, b, c: -np.cos(b))
        assert (S.entry(0, 1) - want12).max_abs() < 1e-12
        for (i, j) in ((0, 0), (0, 2), (1, 1), (1, 2), (2, 2)):
            assert S.entry(i, j).max_abs() < 1e-12
        back = spectral.div_tensor(S)
        assert (back - f).max_abs() < 1e-12

    def test_defining_identity_random(self, grid32, rng):
        for _ in range(5):
            f = mean_free(synth.random_vector(grid32, 5, rng))
            S = operators.inverse_divergence(f, mean_tol=1e-6)
            rel = (spectral.div_tensor(S) - f).max_abs() / f.max_abs()
            assert rel <= 1e-10

    def test_linearity(self, grid32, rng):
        f = mean_free(synth.random_vector(grid32, 4, rng))
        h = mean_free(synth.random_vector(grid32, 4, rng))
        lhs = operators.inverse_divergence(f + h * 0.7, mean_tol=1e-6)
        rhs = (operators.inverse_divergence(f, mean_tol=1e-6)
               + operators.inverse_divergence(h, mean_tol=1e-6) * 0.7)
        assert (lhs - rhs).max_abs() <= 1e-12 * max(lhs.max_abs(), 1.0)

    def test_mean_guard(self, grid32):
        f = VectorField.from_function(
            grid32, lambda a, b, c: (np.ones_like(a), np.zeros_like(a),
                                     np.zeros_like(a)))
        with pytest.raises(MeanNotZero):
            operators.inverse_divergence(f)

    def test_commutes_with_time_differences(self, rng):
        g = Grid(16, 7)
        f = mean_free(synth.random_vector(g, 3, rng, time_dependent=True))
        a = spectral.time_deriv(operators.inverse_divergence(f, mean_tol=1e-6))
        b = operators.inverse_divergence(spectral.time_deriv(f), mean_tol=1e-4)
        assert (a - b).max_abs() <= 1e-12 * max(a.max_abs(), 1e-300)


class TestCurlInverse:
    def test_abc_eigenfield(self, grid32):
        B = synth.abc_field(grid32)
        A = operators.curl_inverse(B, mean_tol=1e-6, div_tol=1e-6)
        assert (A - B).max_abs() < 1e-11

    def test_zero(self, grid32):
        assert operators.curl_inverse(VectorField.zeros(grid32)).max_abs() == 0.0

    def test_roundtrip(self, grid32, rng):
        B = mean_free(synth.random_vector(grid32, 4, rng, solenoidal=True))
        A = operators.curl_inverse(B, mean_tol=1e-6, div_tol=1e-6)
        rel = (spectral.curl(A) - B).max_abs() / B.max_abs()
        assert rel <= 1e-10
        assert spectral.div(A).max_abs() <= 1e-11 * max(A.max_abs(), 1e-300)

    def test_not_solenoidal_guard(self, grid32, rng):
        B = mean_free(synth.random_vector(grid32, 3, rng))
        with pytest.raises(NotSolenoidal):
            operators.curl_inverse(B, mean_tol=1e-6, div_tol=1e-8)


class TestFunctionals:
    def test_abc_helicity_value(self):
        # oracle: the unit benchmark field is its own inverse curl, so the
        # helicity equals its squared L2 norm = 3 (2 pi)^3
        g = Grid(32, 3)
        B = synth.abc_field(g)
        h = operators.magnetic_helicity(B, mean_tol=1e-6, div_tol=1e-6)
        want = 3.0 * (2.0 * np.pi) ** 3
        assert np.abs(h - want).max() <= 1e-10 * want

    def test_orthogonal_cross_helicity(self, grid32):
        v = VectorField.from_function(
            grid32, lambda a, b, c: (np.zeros_like(a), np.zeros_like(a), np.sin(a)))
        B = VectorField.from_function(
            grid32, lambda a, b, c: (np.sin(b), np.zeros_like(a), np.zeros_like(a)))
        assert np.abs(operators.cross_helicity(v, B)).max() < 1e-12

    def test_energy_positivity(self, grid32, rng):
        v = synth.random_vector(grid32, 3, rng)
        B = synth.random_vector(grid32, 3, rng)
        assert np.all(operators.total_energy(v, B) > 0)
        zero = VectorField.zeros(grid32)
        assert np.all(operators.total_energy(zero, zero) == 0.0)

    def test_gauge_invariance(self, grid32, rng):
        B = mean_free(synth.random_vector(grid32, 3, rng, solenoidal=True))
        A = operators.curl_inverse(B, mean_tol=1e-6, div_tol=1e-6)
        chi = synth.random_band_limited(grid32, 3, rng)
        h1 = A.dot(B).integral()
        h2 = (A + spectral.grad(chi)).dot(B).integral()
        assert np.abs(h1 - h2).max() <= 1e-10 * max(np.abs(h1).max(), 1.0)


class TestKillingMoments:
    def test_rotational_moments_of_curl(self, grid32, rng):
        # oracle: moments of curl A against the rotation generators equal
        # twice the integral of A (component-wise); the envelope decays
        # super-exponentially so the wrap seam carries nothing
        x1, x2, x3 = grid32.coords()
        c = grid32.center
        r2 = (x1 - c[0]) ** 2 + (x2 - c[1]) ** 2 + (x3 - c[2]) ** 2
        env = np.exp(-(r2 / 1.3 ** 2) ** 2)
        A = VectorField(grid32, [
            ScalarField(grid32, env * synth.random_band_limited(
                grid32, 2, rng).data) for _ in range(3)])
        f = spectral.curl(A)
        mom = operators.killing_moments(f)
        want = 2.0 * np.stack([c.integral() for c in A.components], axis=1)
        scale = max(np.abs(want).max(), f.max_abs() * grid32.box_len ** 3)
        # measured floor at n = 32 is 7e-9 (envelope tail x quadrature)
        assert np.abs(mom[:, 3:] - want).max() <= 5e-8 * scale

    def test_rotational_moments_compact_bump_ringing_floor(self, grid32, rng):
        # compactly supported C^3 envelopes leave spectral ringing at the
        # seam; the identity then holds at the envelope's tail level
        bump = synth.radial_bump(grid32, grid32.center, 0.5, 1.2)
        A = VectorField(grid32, [
            ScalarField(grid32, bump.data * synth.random_band_limited(
                grid32, 2, rng).data) for _ in range(3)])
        f = spectral.curl(A)
        mom = operators.killing_moments(f)
        want = 2.0 * np.stack([c.integral() for c in A.components], axis=1)
        scale = max(np.abs(want).max(), f.max_abs() * grid32.box_len ** 3)
        assert np.abs(mom[:, 3:] - want).max() <= 3e-3 * scale

    def test_translational_moments_vanish(self, grid32):
        f = synth.supported_solenoidal(grid32, grid32.center, 1.0, "abc", 0.4)
        mom = operators.killing_moments(f)
        assert np.abs(mom[:, :3]).max() <= 1e-10 * f.max_abs() * grid32.box_len ** 3

    def test_positive_bump_moment(self, grid32):
        chi = synth.radial_bump(grid32, grid32.center, 0.4, 1.0)
        f = VectorField(grid32, [chi, ScalarField.zeros(grid32),
                                 ScalarField.zeros(grid32)])
        mom = operators.killing_moments(f)
        # oracle: direct quadrature of chi
        want = chi.integral()
        assert mom[0, 0] == pytest.approx(want[0], rel=1e-12)
        assert want[0] > 0

    def test_support_guard(self, grid32):
        f = synth.abc_field(grid32)  # global field, no compact support
        with pytest.raises(SupportViolation):
            operators.killing_moments(f, support=SupportBox(grid32.center, 0.8),
                                      support_tol=1e-8)

    def test_killing_fields_have_zero_symmetric_gradient(self, grid32):
        basis = operators.KillingBasis(grid32)
        box = SupportBox(grid32.center, 1.1)
        # integral-form defect, measured 1.8e-7 at n = 32
        assert basis.symmetric_gradient_defect(box) < 1e-6
