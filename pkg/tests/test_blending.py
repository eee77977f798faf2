"""Weight schemes, the activated soft-max union, and their gradients."""

import numpy as np
import pytest

from microblend import blending, fields
from microblend.blending import BlendParams
from microblend.trusses import truss_bases, default_truss_names

PARAMS = BlendParams()


@pytest.fixture(scope="module")
def basis3():
    return fields.prepare_basis_set(
        truss_bases(default_truss_names(3), (40, 40)),
        v_star=0.5, min_feature_px=4)


def random_weights(rng, d):
    """Normalized element weights with all entries positive."""
    w = rng.uniform(0.05, 1.0, d)
    return w / w.sum()


class TestNormalizeWeights:
    def test_all_zero_gives_first_basis(self):
        c_tilde, _ = blending.normalize_weights([0.0, 0.0])
        assert np.allclose(c_tilde, [1, 0, 0])

    def test_all_one_gives_last_basis(self):
        c_tilde, _ = blending.normalize_weights([1.0, 1.0])
        assert np.allclose(c_tilde, [0, 0, 1])

    def test_half_half(self):
        c_tilde, _ = blending.normalize_weights([0.5, 0.5])
        assert np.allclose(c_tilde, [0.5, 0.25, 0.25])

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            c = rng.uniform(0, 1, rng.integers(1, 7))
            c_tilde, _ = blending.normalize_weights(c)
            assert abs(c_tilde.sum() - 1.0) <= 1e-12
            assert (c_tilde >= -1e-12).all() and (c_tilde <= 1 + 1e-12).all()

    def test_jacobian_matches_fd(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            c = rng.uniform(0.05, 0.95, 4)
            _, jac = blending.normalize_weights(c)
            h = 1e-6
            for k in range(4):
                cp, cm = c.copy(), c.copy()
                cp[k] += h
                cm[k] -= h
                fd = (blending.normalize_weights(cp)[0]
                      - blending.normalize_weights(cm)[0]) / (2 * h)
                assert np.allclose(jac[:, k], fd, atol=1e-7)

    def test_jacobian_safe_at_zero_weights(self):
        _, jac = blending.normalize_weights([0.0, 0.5, 0.0])
        assert np.isfinite(jac).all()


class TestGlobalInterpolate:
    def setup_method(self):
        rng = np.random.default_rng(2)
        self.ct = np.stack([blending.normalize_weights(rng.uniform(0, 1, 3))[0]
                            for _ in range(3)])

    def test_endpoints(self):
        c_hat, _, _ = blending.global_interpolate(self.ct[:2], [0.0])
        assert np.allclose(c_hat, self.ct[0])
        c_hat, _, _ = blending.global_interpolate(self.ct[:2], [1.0])
        assert np.allclose(c_hat, self.ct[1])

    def test_three_class_mix(self):
        c_hat, _, _ = blending.global_interpolate(self.ct, [0.5, 0.5])
        expected = 0.5 * self.ct[0] + 0.25 * self.ct[1] + 0.25 * self.ct[2]
        assert np.allclose(c_hat, expected)

    def test_convexity_and_sum(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            xi = rng.uniform(0, 1, 2)
            c_hat, w, _ = blending.global_interpolate(self.ct, xi)
            assert abs(c_hat.sum() - 1.0) <= 1e-12
            assert abs(w.sum() - 1.0) <= 1e-12
            assert (w >= -1e-12).all()

    def test_xi_jacobian_matches_fd(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            xi = rng.uniform(0.05, 0.95, 2)
            _, _, dxi = blending.global_interpolate(self.ct, xi)
            h = 1e-6
            for m in range(2):
                xp, xm = xi.copy(), xi.copy()
                xp[m] += h
                xm[m] -= h
                fd = (blending.global_interpolate(self.ct, xp)[0]
                      - blending.global_interpolate(self.ct, xm)[0]) / (2 * h)
                assert np.allclose(dxi[:, m], fd, atol=1e-7)

    def test_class_weight_coefficients(self):
        xi = np.array([0.3, 0.6])
        _, w, _ = blending.global_interpolate(self.ct, xi)
        assert np.allclose(w, [0.7, 0.3 * 0.4, 0.3 * 0.6])

    def test_single_class(self):
        c_hat, w, dxi = blending.global_interpolate(self.ct[:1], [])
        assert np.allclose(c_hat, self.ct[0])
        assert np.allclose(w, [1.0])
        assert dxi.shape == (4, 0)


class TestHeaviside:
    def test_zero_and_one_exact(self):
        a0, _ = blending.heaviside(0.0, 32.0, 0.4)
        a1, _ = blending.heaviside(1.0, 32.0, 0.4)
        assert a0 == 0.0
        assert a1 == pytest.approx(1.0, abs=1e-12)

    def test_symmetric_midpoint(self):
        a, _ = blending.heaviside(0.5, 32.0, 0.5)
        assert a == 0.5

    def test_derivative_matches_fd(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            c = rng.uniform(0.05, 0.95)
            eta = rng.uniform(0.2, 0.8)
            _, da = blending.heaviside(c, 32.0, eta)
            h = 1e-7
            fd = (blending.heaviside(c + h, 32.0, eta)[0]
                  - blending.heaviside(c - h, 32.0, eta)[0]) / (2 * h)
            # abs floor covers FD cancellation noise deep in the tanh tails
            assert da == pytest.approx(fd, rel=1e-4, abs=1e-8)


class TestBlend:
    def test_gate_off_reduces_to_weighted_sum(self, basis3):
        rng = np.random.default_rng(6)
        c_hat = random_weights(rng, 3)
        t = 0.12
        phi = blending.blend(c_hat, t, basis3, PARAMS, gate=np.zeros(3))
        expected = np.einsum("d,dij->ij", c_hat, basis3.scaled_star()) + t
        assert np.allclose(phi, expected, atol=1e-12)

    def test_one_hot_approaches_lower_bound(self, basis3):
        c_hat = np.array([1.0, 0.0, 0.0])
        scale = basis3.field_scale
        t_eq = (basis3.t_lower[0] - basis3.t_star[0]) * scale
        lower = basis3.scaled_lower()[0]
        # inner term equals the lower bound exactly: two equal exponentials
        phi = blending.blend(c_hat, t_eq, basis3, PARAMS)
        assert np.allclose(phi, lower + np.log(2.0) / PARAMS.beta2, atol=1e-9)
        # dominated inner term: the union converges onto the lower bound
        phi = blending.blend(c_hat, t_eq - 1.0, basis3, PARAMS)
        assert np.abs(phi - lower).max() <= np.log(2.0) / PARAMS.beta2

    def test_sandwich_bounds(self, basis3):
        rng = np.random.default_rng(7)
        lower = basis3.scaled_lower()
        star = basis3.scaled_star()
        for _ in range(20):
            c_hat = random_weights(rng, 3)
            t = rng.uniform(-0.8, 0.5)
            eta2 = blending.eta2_from_weights(c_hat)
            a, _ = blending.heaviside(c_hat, PARAMS.beta2, eta2)
            phi = blending.blend(c_hat, t, basis3, PARAMS)
            args = [np.einsum("d,dij->ij", c_hat, star) + t]
            for ad, low in zip(a, lower):
                if ad > 0:
                    args.append(low + np.log(ad) / PARAMS.beta2)
            hi = np.max(args, axis=0)
            assert (phi >= hi - 1e-9).all()
            assert (phi <= hi + np.log(len(basis3.bases) + 1) / PARAMS.beta2
                    + 1e-9).all()

    def test_large_beta2_is_exact_max(self, basis3):
        sharp = BlendParams(beta2=256.0)
        rng = np.random.default_rng(8)
        c_hat = random_weights(rng, 3)
        gate = np.array([1.0, 0.0, 1.0])
        phi = blending.blend(c_hat, 0.1, basis3, sharp, gate=gate)
        args = np.stack([
            np.einsum("d,dij->ij", c_hat, basis3.scaled_star()) + 0.1,
            basis3.scaled_lower()[0],
            basis3.scaled_lower()[2],
        ])
        assert np.abs(phi - args.max(axis=0)).max() <= 1e-2

    def test_gradient_matches_fd(self, basis3):
        rng = np.random.default_rng(9)
        checked = 0
        for _ in range(12):
            c_hat = random_weights(rng, 3)
            t = rng.uniform(-0.3, 0.3)
            eta2 = blending.eta2_from_weights(c_hat)
            if np.any(np.abs(c_hat - eta2) <= 0.05):
                continue  # skip Heaviside transition bands
            grads = blending.blend_grad(c_hat, t, basis3, PARAMS, eta2=eta2)
            h = 1e-6
            for d in range(3):
                cp, cm = c_hat.copy(), c_hat.copy()
                cp[d] += h
                cm[d] -= h
                fd = (blending.blend(cp, t, basis3, PARAMS, eta2=eta2)
                      - blending.blend(cm, t, basis3, PARAMS, eta2=eta2)) / (2 * h)
                scale = np.abs(fd).max() + 1e-12
                assert np.abs(grads[d] - fd).max() / scale <= 1e-4
            checked += 1
        assert checked >= 5

    def test_gated_gradient_is_softmax_weighted_star(self, basis3):
        rng = np.random.default_rng(10)
        c_hat = random_weights(rng, 3)
        gate = np.array([1.0, 1.0, 0.0])
        grads = blending.blend_grad(c_hat, 0.0, basis3, PARAMS, gate=gate)
        b2 = PARAMS.beta2
        inner = np.einsum("d,dij->ij", c_hat, basis3.scaled_star())
        shift = np.maximum(b2 * inner, b2 * basis3.scaled_lower().max(axis=0))
        e0 = np.exp(b2 * inner - shift)
        denom = e0.copy()
        for ad, low in zip(gate, basis3.scaled_lower()):
            denom += ad * np.exp(b2 * low - shift)
        for d in range(3):
            assert np.allclose(grads[d], (e0 / denom) * basis3.scaled_star()[d],
                               atol=1e-12)

    def test_duplicate_basis_split_weight(self, basis3):
        # duplicating a basis and splitting its weight leaves the blend and
        # the summed gradient unchanged
        dup = fields.BasisSet(
            bases=basis3.bases + [basis3.bases[0]],
            v_star=basis3.v_star,
            t_star=np.concatenate([basis3.t_star, basis3.t_star[:1]]),
            t_lower=np.concatenate([basis3.t_lower, basis3.t_lower[:1]]),
            v_lower=np.concatenate([basis3.v_lower, basis3.v_lower[:1]]),
            v_min=basis3.v_min,
            min_feature_px=basis3.min_feature_px,
            field_scale=basis3.field_scale,
        )
        dup.phi_star = basis3.phi_star + [basis3.phi_star[0]]
        dup.phi_lower = basis3.phi_lower + [basis3.phi_lower[0]]
        c3 = np.array([0.5, 0.3, 0.2])
        c4 = np.array([0.25, 0.3, 0.2, 0.25])
        gate3 = np.array([1.0, 0.0, 0.0])
        gate4 = np.array([0.5, 0.0, 0.0, 0.5])
        phi3 = blending.blend(c3, 0.05, basis3, PARAMS, gate=gate3)
        phi4 = blending.blend(c4, 0.05, dup, PARAMS, gate=gate4)
        assert np.allclose(phi3, phi4, atol=1e-12)
        g3 = blending.blend_grad(c3, 0.05, basis3, PARAMS, gate=gate3)
        g4 = blending.blend_grad(c4, 0.05, dup, PARAMS, gate=gate4)
        assert np.allclose(g3[0], g4[0] , atol=1e-12)
        assert np.allclose(g4[0], g4[3], atol=1e-12)


class TestRelaxedVolume:
    def test_zero_field(self):
        v, _ = blending.relaxed_volume(np.zeros((6, 6)), 64.0)
        assert v == 0.5

    def test_saturated_field(self):
        v, _ = blending.relaxed_volume(10.0 * np.ones((6, 6)), 64.0)
        assert v == pytest.approx(1.0, abs=1e-12)

    def test_dfield_matches_fd(self):
        rng = np.random.default_rng(11)
        phi = rng.normal(0, 0.05, (8, 8))
        _, dv = blending.relaxed_volume(phi, 64.0)
        h = 1e-7
        for idx in [(0, 0), (3, 4), (7, 7)]:
            pp, pm = phi.copy(), phi.copy()
            pp[idx] += h
            pm[idx] -= h
            fd = (blending.relaxed_volume(pp, 64.0)[0]
                  - blending.relaxed_volume(pm, 64.0)[0]) / (2 * h)
            assert dv[idx] == pytest.approx(fd, rel=1e-6, abs=1e-14)


class TestBlendToVolume:
    def test_high_volume_reachable(self, basis3):
        rng = np.random.default_rng(12)
        for _ in range(5):
            c_hat = random_weights(rng, 3)
            res = blending.blend_to_volume(c_hat, 0.95, basis3, PARAMS)
            assert abs(res.volume - 0.95) <= 2e-3
            assert not res.clamped

    def test_below_floor_clamps_to_union_volume(self, basis3):
        rng = np.random.default_rng(13)
        c_hat = random_weights(rng, 3)
        eta2 = blending.eta2_from_weights(c_hat)
        a, _ = blending.heaviside(c_hat, PARAMS.beta2, eta2)
        b2 = PARAMS.beta2
        union = np.zeros(basis3.shape)
        with np.errstate(over="ignore"):
            for ad, low in zip(a, basis3.scaled_lower()):
                if ad > 0:
                    union += ad * np.exp(b2 * low)
        v_floor = float(np.count_nonzero(union >= 1.0)) / union.size
        res = blending.blend_to_volume(c_hat, 0.01, basis3, PARAMS)
        assert res.clamped
        assert res.volume == pytest.approx(v_floor, abs=2e-3)

    def test_one_hot_at_star_volume(self, basis3):
        res = blending.blend_to_volume(np.array([1.0, 0.0, 0.0]),
                                       basis3.v_star, basis3, PARAMS)
        assert abs(res.t) <= 0.05

    def test_feasibility_of_random_blends(self, basis3):
        # small smoke version of the acceptance sweep
        rng = np.random.default_rng(14)
        for _ in range(25):
            c_hat = random_weights(rng, 3)
            v = rng.uniform(basis3.v_min, 0.95)
            res = blending.blend_to_volume(c_hat, v, basis3, PARAMS)
            solid = res.phi >= 0
            assert fields.is_self_connected(solid)
            assert fields.min_feature_ok(solid, basis3.min_feature_px)
