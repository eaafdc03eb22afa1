import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdgzsl.config import TrainConfig
from sdgzsl.errors import ConfigError, NumericError, ShapeError
from sdgzsl.networks import (
    CvaeEncoder,
    DisentangleDecoder,
    DisentangleEncoder,
    Discriminator,
    RelationNet,
    decode_disentangle,
    discriminate,
    encode_disentangle,
    expected_param_count,
    generate,
    init_model,
    relate,
    reparameterize,
)
from sdgzsl.tensor import Rng, Tape, Tensor, concat, precision


def small_cfg(**kw):
    base = dict(feature_dim=16, attr_dim=6, latent_dim=4, hs_dim=3, cvae_hidden=8, generator_hidden=8,
                decoder_hidden=8, relation_hidden=8, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestDisentangle:
    def test_shapes(self):
        E = DisentangleEncoder(16, 3, 3, Rng(0))
        h_s, h_n = encode_disentangle(E, Tensor(Rng(1).normal((4, 16))))
        assert h_s.shape == (4, 3) and h_n.shape == (4, 3)

    def test_split_matches_raw_output(self):
        E = DisentangleEncoder(16, 3, 5, Rng(0))
        x = Tensor(Rng(1).normal((4, 16)))
        h_s, h_n = encode_disentangle(E, x)
        np.testing.assert_array_equal(concat([h_s, h_n]).data, E.forward(x).data)

    def test_zero_weights_give_zero_h(self):
        E = DisentangleEncoder(16, 3, 3, None)
        h_s, h_n = encode_disentangle(E, Tensor(Rng(1).normal((4, 16))))
        assert not h_s.data.any() and not h_n.data.any()

    def test_feature_dim_mismatch(self):
        E = DisentangleEncoder(16, 3, 3, Rng(0))
        with pytest.raises(ShapeError):
            encode_disentangle(E, Tensor(np.ones((2, 15))))

    def test_identity_round_trip(self):
        # overcomplete identity embedding: l + m = 6 >= d = 4, positive inputs stay on the identity branch
        d, l, m, hidden = 4, 3, 3, 5
        with precision("f64"):
            E = DisentangleEncoder(d, l, m, None)
            D = DisentangleDecoder(l + m, hidden, d, None)
            E.fc.weight.data[:, :] = np.eye(d, l + m)
            D.fc1.weight.data[:, :] = np.eye(l + m, hidden)
            D.fc2.weight.data[:, :] = np.eye(hidden, d)
            x = Tensor(Rng(2).uniform((8, d)) + 0.1)
            h_s, h_n = encode_disentangle(E, x)
            x_bar = decode_disentangle(D, h_s, h_n)
        assert np.max(np.abs(x_bar.data - x.data)) < 1e-10

    def test_bad_split(self):
        with pytest.raises(ConfigError):
            DisentangleEncoder(16, 0, 3, Rng(0))


class TestReparameterize:
    def test_zero_noise(self):
        mu = Tensor(np.arange(6.0).reshape(2, 3))
        z = reparameterize(mu, Tensor(np.ones((2, 3))), eps=np.zeros((2, 3)))
        np.testing.assert_array_equal(z.data, mu.data)

    def test_moments(self):
        z = reparameterize(Tensor(np.zeros((100_000, 1))), Tensor(np.ones((100_000, 1))), Rng(4, "noise"))
        assert abs(z.data.mean()) < 0.02
        assert abs(z.data.var() - 1.0) < 0.05

    def test_grad_wrt_sigma_is_noise(self):
        eps = Rng(3, "noise").normal((2, 3))
        with precision("f64"):
            mu = Tensor(np.zeros((2, 3)), requires_grad=True)
            sigma = Tensor(np.full((2, 3), 0.7), requires_grad=True)
            with Tape() as tape:
                loss = reparameterize(mu, sigma, eps=eps).sum()
            tape.backward(loss)
        np.testing.assert_allclose(sigma.grad, eps)
        np.testing.assert_allclose(mu.grad, 1.0)

    def test_nonpositive_sigma(self):
        with pytest.raises(NumericError):
            reparameterize(Tensor(np.zeros(2)), Tensor(np.array([1.0, 0.0])), eps=np.zeros(2))


class TestHeads:
    def test_relate_grid(self):
        R = RelationNet(3, 5, 8, Rng(0))
        scores = relate(R, Tensor(Rng(1).normal((2, 3))), Tensor(Rng(2).uniform((3, 5))))
        assert scores.shape == (2, 3)
        assert np.all((scores.data > 0) & (scores.data < 1))

    def test_relate_pairs_match_direct_scoring(self):
        R = RelationNet(3, 5, 8, Rng(0))
        h = Tensor(Rng(1).normal((2, 3)))
        a = Tensor(Rng(2).uniform((3, 5)))
        scores = relate(R, h, a)
        direct = R.forward(concat([Tensor(h.data[[1]]), Tensor(a.data[[2]])]))
        assert scores.data[1, 2] == pytest.approx(direct.item(), rel=1e-6)

    def test_discriminator_zero_weights(self):
        Dis = Discriminator(6, None)
        np.testing.assert_array_equal(discriminate(Dis, Tensor(np.ones((4, 6)))).data, 0.5)

    def test_discriminator_output_is_clamped(self):
        Dis = Discriminator(2, None)
        Dis.layers[-1].bias.data[:] = 100.0
        p = discriminate(Dis, Tensor(np.zeros((3, 2))))
        assert np.all(p.data <= 1 - 1e-6 + 1e-12)

    def test_quadratic_discriminator_features(self):
        with precision("f64"):
            Dis = Discriminator(3, None, features="quadratic")
            h = Tensor(np.array([[1.0, 2.0, 3.0]]))
            feats = Dis._featurize(h).data
        # [h, h_i h_j for i <= j]
        np.testing.assert_array_equal(feats, [[1, 2, 3, 1, 2, 3, 4, 6, 9]])

    def test_generate_then_encode(self):
        state = init_model(small_cfg())
        x_hat = generate(state.P, Tensor(Rng(0).normal((5, 4))), Tensor(Rng(1).uniform((5, 6))))
        h = state.E.forward(x_hat)
        assert x_hat.shape == (5, 16) and h.shape == (5, 6)

    def test_cvae_sigma_positive(self):
        Q = CvaeEncoder(16, 6, 8, 4, Rng(0))
        _, sigma = Q.forward(Tensor(Rng(1).normal((10, 16)) * 5), Tensor(Rng(2).uniform((10, 6))))
        assert np.all(sigma.data > 0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-30, 30), st.integers(0, 1000))
    def test_sigma_positive_property(self, shift, seed):
        Q = CvaeEncoder(4, 2, 6, 3, Rng(seed))
        x = Tensor(Rng(seed, "noise").normal((3, 4)) + shift)
        _, sigma = Q.forward(x, Tensor(np.ones((3, 2))))
        assert np.all(sigma.data > 0)

    def test_eval_mode_is_deterministic(self):
        state = init_model(small_cfg(dropout=0.5))
        x = Tensor(Rng(1).normal((4, 16)))
        a = Tensor(Rng(2).uniform((4, 6)))
        first = state.Q.forward(x, a, Rng(3), training=False)[0].data
        second = state.Q.forward(x, a, Rng(4), training=False)[0].data
        np.testing.assert_array_equal(first, second)


class TestInitModel:
    def test_parameter_count_closed_form(self):
        cfg = TrainConfig(feature_dim=128, attr_dim=16, latent_dim=32, hs_dim=64)
        state = init_model(cfg)
        # Q: (128+16)->2048, 2048->2048, 2048->2048, two heads 2048->32
        q = (144 * 2048 + 2048) + 2 * (2048 * 2048 + 2048) + 2 * (2048 * 32 + 32)
        # P: (32+16)->2048->128
        p = (48 * 2048 + 2048) + (2048 * 128 + 128)
        e = 128 * 128 + 128
        d = (128 * 2048 + 2048) + (2048 * 128 + 128)
        r = (80 * 2048 + 2048) + (2048 + 1)
        dis = 128 + 1
        assert state.num_params() == q + p + e + d + r + dis == expected_param_count(cfg)

    def test_same_seed_same_parameters(self):
        a, b = init_model(small_cfg(seed=5)), init_model(small_cfg(seed=5))
        for (name, pa), pb in zip(a.all_params().items(), b.all_params().values()):
            assert pa.data.tobytes() == pb.data.tobytes(), name

    def test_unequal_split_allowed(self):
        state = init_model(small_cfg(hs_dim=3, hn_dim=5))
        assert state.E.l == 3 and state.E.m == 5

    def test_hn_defaults_to_hs(self):
        assert small_cfg(hs_dim=7).hn_dim == 7

    def test_invalid_dims(self):
        with pytest.raises(ConfigError):
            init_model(small_cfg(latent_dim=0))

    def test_moments_start_at_zero(self):
        state = init_model(small_cfg())
        assert state.opt_w.step_count == 0
        assert all(not m.any() for m in state.opt_w.m.values())
        assert set(state.opt_dis.params) == set(state.dis_params())
