import numpy as np
import pytest

from ppgauth import nn
from ppgauth.errors import ConfigurationError, NumericDegeneracyError, ShapeError
from ppgauth.model import Mode, ModelConfig, MultiTaskPpgModel


SMALL = ModelConfig(
    in_channels=2, input_len=48, bottleneck_channels=4, path_channels=4,
    identity_kernel=5, identity_dilation=2, se_reduction=4, embed_dim=8,
)


@pytest.fixture(scope="module")
def model():
    return MultiTaskPpgModel(SMALL, seed=3)


def batch(rng, n=3, cfg=SMALL):
    return rng.normal(size=(n, cfg.in_channels, cfg.input_len))


class TestConfig:
    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(quality_kernel=4).block(6)

    def test_se_divisibility(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(path_channels=5, se_reduction=4).block(6)

    def test_default_param_budget(self):
        n = MultiTaskPpgModel(ModelConfig(), seed=0).count_params()
        assert 40_000 <= n <= 120_000


class TestForwardShapes:
    def test_quality_output(self, model):
        rng = np.random.default_rng(0)
        out = model.forward(batch(rng), Mode.QUALITY)
        assert out.data.shape == (3, 1)
        assert np.all((out.data > 0) & (out.data < 1))

    def test_identity_output_unit_norm(self, model):
        rng = np.random.default_rng(1)
        out = model.forward(batch(rng), Mode.IDENTITY)
        assert out.data.shape == (3, SMALL.embed_dim)
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-9)

    def test_wrong_channel_count_rejected(self, model):
        rng = np.random.default_rng(2)
        with pytest.raises(ShapeError):
            model.forward(rng.normal(size=(1, 5, 48)), Mode.QUALITY)

    def test_too_short_input_rejected(self, model):
        rng = np.random.default_rng(3)
        with pytest.raises(ShapeError):
            model.forward(rng.normal(size=(1, 2, 4)), Mode.QUALITY)

    def test_eval_forward_is_deterministic(self, model):
        rng = np.random.default_rng(4)
        x = batch(rng)
        a = model.forward(x, Mode.IDENTITY).data
        b = model.forward(x, Mode.IDENTITY).data
        np.testing.assert_array_equal(a, b)

    def test_batch_independence(self, model):
        # Eval-mode forward of a row alone equals its row in a batch.
        rng = np.random.default_rng(5)
        x = batch(rng, n=4)
        full = model.forward(x, Mode.IDENTITY).data
        solo = model.forward(x[2:3], Mode.IDENTITY).data
        np.testing.assert_allclose(full[2], solo[0], atol=1e-12)


class TestReceptiveField:
    """Perturb one input sample and watch which pre-pool outputs move."""

    def field_width(self, prefix):
        cfg = ModelConfig(
            in_channels=1, input_len=101, bottleneck_channels=2, path_channels=2,
            identity_kernel=11, identity_dilation=2, se_reduction=4,
        )
        model = MultiTaskPpgModel(cfg, seed=1)
        block = model.blocks["shared"]
        p = model.params
        rng = np.random.default_rng(6)
        x0 = rng.normal(size=(1, 1, 101))

        def path_out(x):
            z = nn.conv1d(nn.Tensor(x), p["shared.bottleneck.w"],
                          p["shared.bottleneck.b"], padding="same")
            kind = "qpath" if prefix == "quality" else "ipath"
            dil = 1 if prefix == "quality" else block.identity_dilation
            # No relu here: a dead unit would hide edge taps and understate
            # the architectural receptive field.
            for i in range(2):
                z = nn.conv1d(z, p[f"shared.{kind}{i}.w"],
                              p[f"shared.{kind}{i}.b"],
                              dilation=dil, padding="same")
            return z.data

        base = path_out(x0)
        x1 = x0.copy()
        x1[0, 0, 50] += 1.0
        moved = np.flatnonzero(np.any(np.abs(path_out(x1) - base) > 1e-12, axis=(0, 1)))
        return moved.max() - moved.min() + 1

    def test_quality_path_is_local(self):
        # Two stacked k=3 convs: 5-sample receptive field.
        assert self.field_width("quality") == 5

    def test_identity_path_is_wide(self):
        # Two stacked k=11 dilation-2 convs: 41-sample receptive field.
        assert self.field_width("identity") == 41


class TestModeIsolation:
    def test_mode_param_sets(self, model):
        q = set(model.param_names_for_mode(Mode.QUALITY))
        i = set(model.param_names_for_mode(Mode.IDENTITY))
        assert q | i == set(model.params)
        shared = {n for n in model.params if n.startswith("shared.")}
        assert q & i == shared
        assert "score_scale" in i and "score_scale" not in q
        assert "quality_head.w" in q and "quality_head.w" not in i

    def test_quality_loss_reaches_no_identity_params(self, model):
        rng = np.random.default_rng(7)
        for p in model.params.values():
            p.zero_grad()
        out = model.forward(batch(rng), Mode.QUALITY, training=True)
        nn.bce_loss(out, np.ones((3, 1))).backward()
        for name, p in model.params.items():
            if name in model.param_names_for_mode(Mode.QUALITY):
                continue
            assert p.grad is None, name

    def test_identity_loss_reaches_no_quality_params(self, model):
        rng = np.random.default_rng(8)
        for p in model.params.values():
            p.zero_grad()
        emb_a = model.forward(batch(rng), Mode.IDENTITY, training=True)
        emb_b = model.forward(batch(rng), Mode.IDENTITY, training=True)
        score = model.pair_score_tensor(emb_a, emb_b)
        nn.bce_loss(score, np.ones(3)).backward()
        for name, p in model.params.items():
            if name in model.param_names_for_mode(Mode.IDENTITY):
                continue
            assert p.grad is None, name


class TestPairScore:
    def test_symmetry(self, model):
        rng = np.random.default_rng(9)
        a = rng.normal(size=8)
        a /= np.linalg.norm(a)
        b = rng.normal(size=8)
        b /= np.linalg.norm(b)
        assert model.pair_score(a, b) == pytest.approx(model.pair_score(b, a))

    def test_identical_embeddings_score_high(self, model):
        e = np.zeros(8)
        e[0] = 1.0
        alpha = model.params["score_scale"].data[0]
        beta = model.params["score_bias"].data[0]
        expected = 1.0 / (1.0 + np.exp(-(alpha + beta)))
        assert model.pair_score(e, e) == pytest.approx(expected, abs=1e-12)

    def test_monotone_in_cosine(self, model):
        e1 = np.zeros(8)
        e1[0] = 1.0
        scores = []
        for angle in (0.0, 0.5, 1.0, 2.0, np.pi):
            e2 = np.zeros(8)
            e2[0], e2[1] = np.cos(angle), np.sin(angle)
            scores.append(model.pair_score(e1, e2))
        assert all(a > b for a, b in zip(scores, scores[1:]))

    def test_zero_norm_rejected(self, model):
        with pytest.raises(NumericDegeneracyError):
            model.pair_score(np.zeros(8), np.ones(8))

    def test_tensor_and_array_paths_agree(self, model):
        rng = np.random.default_rng(10)
        a = rng.normal(size=(4, 8))
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        b = rng.normal(size=(4, 8))
        b /= np.linalg.norm(b, axis=1, keepdims=True)
        t = model.pair_score_tensor(nn.Tensor(a), nn.Tensor(b)).data
        np.testing.assert_allclose(model.pair_score(a, b), t, atol=1e-12)


class TestPersistence:
    def test_checkpoint_roundtrip(self, tmp_path, model):
        rng = np.random.default_rng(11)
        x = batch(rng)
        path = tmp_path / "model.ckpt"
        model.save(path)
        loaded = MultiTaskPpgModel.load(path)
        assert loaded.config == model.config
        np.testing.assert_array_equal(
            loaded.forward(x, Mode.IDENTITY).data, model.forward(x, Mode.IDENTITY).data
        )
        np.testing.assert_array_equal(
            loaded.forward(x, Mode.QUALITY).data, model.forward(x, Mode.QUALITY).data
        )

    def test_copy_is_deep(self, model):
        clone = model.copy()
        clone.params["score_scale"].data[0] += 1.0
        clone.buffers["shared.bn.running_mean"][0] += 1.0
        assert model.params["score_scale"].data[0] != clone.params["score_scale"].data[0]
        assert model.buffers["shared.bn.running_mean"][0] != clone.buffers["shared.bn.running_mean"][0]

    def test_seed_changes_init(self):
        a = MultiTaskPpgModel(SMALL, seed=1)
        b = MultiTaskPpgModel(SMALL, seed=2)
        assert not np.array_equal(
            a.params["shared.bottleneck.w"].data, b.params["shared.bottleneck.w"].data
        )

    def test_same_seed_same_init(self):
        a = MultiTaskPpgModel(SMALL, seed=5)
        b = MultiTaskPpgModel(SMALL, seed=5)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)


class TestConvenience:
    def test_quality_confidences_batching(self, model):
        rng = np.random.default_rng(12)
        x = batch(rng, n=7)
        np.testing.assert_allclose(
            model.quality_confidences(x, batch_size=3),
            model.forward(x, Mode.QUALITY).data[:, 0],
            atol=1e-12,
        )

    def test_embeddings_empty(self, model):
        out = model.embeddings(np.empty((0, 2, 48)))
        assert out.shape == (0, SMALL.embed_dim)
