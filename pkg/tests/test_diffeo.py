"""Map composition, Jacobians, inversion, pushforward, volume correction."""

import numpy as np
import pytest

from cilab import diffeo, operators, spectral, synth
from cilab.errors import AmplitudeTooLarge, CertificateFail, MeanNotZero
from cilab.fields import Grid, MapField, ScalarField, SupportBox, VectorField


def shear_map(grid, eps=0.08):
    disp = VectorField.from_function(
        grid, lambda a, b, c: (eps * np.sin(b), np.zeros_like(a), np.zeros_like(a)))
    return MapField(grid, disp)


def translation_map(grid, cells):
    shift = np.asarray(cells, dtype=float) * grid.h
    disp = VectorField.from_function(
        grid, lambda a, b, c: (np.full_like(a, shift[0]), np.full_like(a, shift[1]),
                               np.full_like(a, shift[2])))
    return MapField(grid, disp)


class TestCompose:
    def test_identity_map(self, grid32, rng):
        f = synth.random_band_limited(grid32, 3, rng)
        assert diffeo.compose_field(f, MapField.identity(grid32)) is f

    def test_lattice_translation_is_cyclic_shift(self, grid32, rng):
        f = synth.random_band_limited(grid32, 3, rng)
        m = translation_map(grid32, (2, 0, 5))
        got = diffeo.compose_field(f, m)
        want = np.roll(f.data, (-2, 0, -5), axis=(1, 2, 3))
        assert np.array_equal(got.data, want)

    def test_associativity(self, grid32, rng):
        f = synth.random_band_limited(grid32, 2, rng)
        m1 = MapField(grid32, synth.random_vector(grid32, 2, rng, amplitude=0.05))
        m2 = MapField(grid32, synth.random_vector(grid32, 2, rng, amplitude=0.05))
        a = diffeo.compose_field(diffeo.compose_field(f, m1), m2)
        b = diffeo.compose_field(f, diffeo.compose_map(m1, m2))
        # equal to interpolation accuracy
        assert (a - b).max_abs() < 2e-5 * max(f.max_abs(), 1.0)


class TestJacobian:
    def test_identity(self, grid32):
        rep = diffeo.jacobian_det(MapField.identity(grid32))
        assert rep.min_det == pytest.approx(1.0)
        assert rep.max_det == pytest.approx(1.0)

    def test_shear_is_volume_preserving(self, grid32):
        rep = diffeo.jacobian_det(shear_map(grid32), method="trace")
        assert np.abs(rep.det_field.data - 1.0).max() < 1e-13

    def test_trace_vs_cofactor(self, grid32, rng):
        m = MapField(grid32, synth.random_vector(grid32, 3, rng, amplitude=0.06))
        a = diffeo.jacobian_det(m, method="trace").det_field
        b = diffeo.jacobian_det(m, method="cofactor").det_field
        assert np.abs(a.data - b.data).max() < 1e-12

    def test_chain_rule(self, grid32, rng):
        m1 = MapField(grid32, synth.random_vector(grid32, 2, rng, amplitude=0.04))
        m2 = MapField(grid32, synth.random_vector(grid32, 2, rng, amplitude=0.04))
        comp = diffeo.compose_map(m1, m2)
        d_comp = diffeo.jacobian_det(comp).det_field
        d1_at_m2 = diffeo.compose_field(diffeo.jacobian_det(m1).det_field, m2)
        d2 = diffeo.jacobian_det(m2).det_field
        assert np.abs(d_comp.data - d1_at_m2.data * d2.data).max() < 1e-5


class TestInvertNearIdentity:
    def test_identity(self, grid32):
        inv = diffeo.invert_near_identity(MapField.identity(grid32))
        assert inv.is_identity()

    def test_translation(self, grid32):
        m = translation_map(grid32, (3, 1, 0))
        inv = diffeo.invert_near_identity(m)
        comp = diffeo.compose_map(m, inv)
        assert comp.displacement.max_abs() < 1e-14

    def test_random_small_map(self, grid32, rng):
        m = MapField(grid32, synth.random_vector(grid32, 2, rng, amplitude=0.05))
        inv = diffeo.invert_near_identity(m, inv_tol=1e-12 * grid32.box_len)
        assert diffeo.composition_defect(m, inv) <= 1e-9 * grid32.box_len
        assert diffeo.composition_defect(inv, m) <= 1e-7 * grid32.box_len


class TestPushforward:
    def test_identity(self, grid32):
        B = synth.abc_field(grid32)
        out = diffeo.pushforward(B, MapField.identity(grid32),
                                 MapField.identity(grid32))
        assert out is B

    def test_lattice_translation_preserves_everything(self, grid32):
        B = synth.abc_field(grid32)
        m = translation_map(grid32, (4, 0, 0))
        minv = diffeo.invert_near_identity(m)
        out = diffeo.pushforward(B, m, minv)
        h0 = operators.magnetic_helicity(B, mean_tol=1e-6, div_tol=1e-6)
        h1 = operators.magnetic_helicity(out, mean_tol=1e-6, div_tol=1e-6)
        assert np.abs(h1 - h0).max() <= 1e-12 * np.abs(h0).max()

    def test_shear_helicity_drift(self):
        # volume-preserving map: helicity is conserved up to interpolation
        g = Grid(64, 2)
        B = synth.abc_field(g)
        m = shear_map(g, eps=0.1)
        minv = diffeo.invert_near_identity(m, inv_tol=1e-12 * g.box_len)
        out = diffeo.pushforward(B, m, minv)
        h0 = operators.magnetic_helicity(B, mean_tol=1e-6, div_tol=1e-6)
        h1 = operators.magnetic_helicity(out, mean_tol=1e-2, div_tol=1e-2)
        drift = np.abs(h1 - h0).max() / np.abs(h0).max()
        assert drift <= 1e-3

    def test_div_defect_decreases_with_resolution(self, rng):
        drifts = []
        for n in (24, 48):
            g = Grid(n, 2)
            B = synth.abc_field(g)
            m = shear_map(g, eps=0.1)
            minv = diffeo.invert_near_identity(m, inv_tol=1e-12 * g.box_len)
            out = diffeo.pushforward(B, m, minv)
            drifts.append(spectral.div(out).max_abs())
        assert drifts[1] < drifts[0]


class TestMoserCorrection:
    def test_zero_density(self, grid32):
        box = SupportBox(grid32.center, 1.5)
        phi, cert = diffeo.moser_correction(ScalarField.zeros(grid32), box)
        assert phi.is_identity()
        assert cert["moser_det"] == 0.0

    def test_constant_rejected(self, grid32):
        f = ScalarField(grid32, np.full(grid32.shape, 0.1))
        box = SupportBox(grid32.center, 1.5)
        with pytest.raises(MeanNotZero):
            diffeo.moser_correction(f, box)

    def test_amplitude_guard(self, grid32):
        bump = synth.radial_bump(grid32, grid32.center, 0.4, 1.2)
        f = ScalarField(grid32, 0.8 * (bump.data - bump.data.mean()))
        box = SupportBox(grid32.center, 1.5)
        with pytest.raises(AmplitudeTooLarge):
            diffeo.moser_correction(f, box)

    def test_certificate_and_flow_convergence(self):
        g = Grid(32, 2)
        b1 = synth.radial_bump(g, g.center + np.array([0.7, 0, 0]), 0.3, 1.0)
        b2 = synth.radial_bump(g, g.center - np.array([0.7, 0, 0]), 0.3, 1.0)
        f = ScalarField(g, 1e-2 * (b1.data - b2.data * b1.data.sum() / b2.data.sum()))
        box = SupportBox(g.center, 2.2)
        # measured floor at n = 32 is 5.6e-5 (interpolation-limited); the
        # flow is already converged at tiny substep counts there
        phi, cert = diffeo.moser_correction(f, box, n_s=8, mean_tol=1e-6,
                                            moser_tol=1e-3)
        assert cert["moser_det"] <= 2e-4
        det = diffeo.jacobian_det(phi).det_field
        assert np.abs(det.data - (1.0 + f.data)).max() == pytest.approx(
            cert["moser_det"])


class TestMapFieldInvariants:
    def test_wrap_guard(self, grid32):
        disp = VectorField.from_function(
            grid32, lambda a, b, c: (np.full_like(a, grid32.box_len / 3),
                                     np.zeros_like(a), np.zeros_like(a)))
        with pytest.raises(Exception):
            MapField(grid32, disp)
