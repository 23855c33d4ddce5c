"""Model assembly, forward composition, and checkpoint persistence."""

import numpy as np
import pytest

import lcanet.tensor as T
from lcanet import (
    BackboneConfig,
    CheckpointError,
    ConfigError,
    LcaConfig,
    LossConfig,
    Rng,
    build_model,
    concept_count,
    load_checkpoint,
    max_entropy_loss,
    save_checkpoint,
)
from lcanet.optim import SGD
from lcanet.tensor import ShapeError, Tensor


def tiny_backbone(h=16, w=16, channels=(16, 32)):
    return BackboneConfig("tiny_cnn", channels, (h, w))


def ext_backbone(c=1, h=2, w=2):
    return BackboneConfig("external_features", (c,), (h, w))


RNG_STATE = Rng(0).state_bytes()


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def test_feature_shape_tiny_cnn():
    m = build_model(tiny_backbone(), "gap", None, 8, rng=Rng(0))
    assert m.feature_shape() == (32, 4, 4)


def test_lca_head_concept_count_on_default_geometry():
    m = build_model(tiny_backbone(), "lca", LcaConfig(32, 32), 8, rng=Rng(0))
    c, h, w = m.feature_shape()
    assert concept_count(h, w, m.lca_cfg) == 84  # (10*10) - 16


def test_gap_classifier_input_is_channel_count():
    m = build_model(tiny_backbone(), "gap", None, 8, rng=Rng(0))
    assert m.param("cls_weight").shape == (8, 32)


def test_lca_classifier_input_is_embed_dim():
    m = build_model(tiny_backbone(), "lca", LcaConfig(32, 12), 8, rng=Rng(0))
    assert m.param("cls_weight").shape == (8, 12)


def test_parameter_names_are_stable():
    m = build_model(tiny_backbone(), "lca", LcaConfig(32, 32), 8, rng=Rng(0))
    assert [p.name for p in m.parameters()] == [
        "conv1_weight", "conv1_bias", "conv2_weight", "conv2_bias",
        "fc_weight", "fc_bias", "cls_weight", "cls_bias",
    ]


def test_same_seed_same_initial_logits():
    x = Tensor(Rng(5).uniform_array((2, 3, 16, 16), 0, 1, dtype=np.float32))
    a = build_model(tiny_backbone(), "lca", LcaConfig(32, 16), 4, rng=Rng(7))
    b = build_model(tiny_backbone(), "lca", LcaConfig(32, 16), 4, rng=Rng(7))
    np.testing.assert_array_equal(a.forward(x).data, b.forward(x).data)


def test_freeze_backbone_excludes_conv_params():
    m = build_model(tiny_backbone(), "lca", LcaConfig(32, 16), 4, rng=Rng(0))
    names = [p.name for p in m.trainable_parameters(freeze_backbone=True)]
    assert names == ["fc_weight", "fc_bias", "cls_weight", "cls_bias"]


class TestBuildValidation:
    def test_unknown_head(self):
        with pytest.raises(ConfigError):
            build_model(tiny_backbone(), "attention", None, 4, rng=Rng(0))

    def test_num_classes_lower_bound(self):
        with pytest.raises(ConfigError):
            build_model(tiny_backbone(), "gap", None, 1, rng=Rng(0))

    def test_input_too_small_for_backbone(self):
        with pytest.raises(ConfigError):
            build_model(tiny_backbone(3, 3), "gap", None, 4, rng=Rng(0))

    def test_lca_channel_mismatch(self):
        with pytest.raises(ConfigError):
            build_model(tiny_backbone(), "lca", LcaConfig(16, 8), 4, rng=Rng(0))

    def test_lca_needs_spatial_extent(self):
        with pytest.raises(ConfigError):
            build_model(ext_backbone(4, 1, 1), "lca", LcaConfig(4, 4), 4, rng=Rng(0))

    def test_backbone_kind_checked(self):
        with pytest.raises(ConfigError):
            BackboneConfig("resnext", (8,), (16, 16))

    def test_tiny_cnn_channel_arity(self):
        with pytest.raises(ConfigError):
            BackboneConfig("tiny_cnn", (16,), (16, 16))


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_external_features_reproduces_head_worked_example():
    """Hand map [[1,2],[3,4]] through identity FC gives 2.5 pre-classifier."""
    m = build_model(ext_backbone(), "lca", LcaConfig(1, 1), 2, rng=None)
    m.param("fc_weight").data[...] = 1.0
    fm = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
    head = m.head_output(m.feature_map(fm))
    np.testing.assert_allclose(head.data, [[2.5]], atol=1e-6)


def test_zero_classifier_gives_uniform_predictions():
    m = build_model(tiny_backbone(), "gap", None, 5, rng=None)
    x = Tensor(Rng(1).uniform_array((3, 3, 16, 16), 0, 1, dtype=np.float32))
    logits = m.forward(x)
    np.testing.assert_array_equal(logits.data, np.zeros((3, 5)))
    # uniform softmax -> NLL is ln K
    loss = max_entropy_loss(logits, np.zeros(3, dtype=np.int64), LossConfig(0.0))
    assert abs(loss.item() - np.log(5)) < 1e-6


def test_identical_images_identical_logit_rows():
    m = build_model(tiny_backbone(), "lca", LcaConfig(32, 16), 4, rng=Rng(3))
    one = Rng(4).uniform_array((1, 3, 16, 16), 0, 1, dtype=np.float32)
    batch = Tensor(np.repeat(one, 5, axis=0))
    logits = m.forward(batch).data
    for row in logits[1:]:
        np.testing.assert_array_equal(row, logits[0])


def test_forward_rejects_wrong_image_shape():
    m = build_model(tiny_backbone(), "gap", None, 4, rng=Rng(0))
    with pytest.raises(ShapeError):
        m.forward(Tensor(np.zeros((1, 3, 8, 8), dtype=np.float32)))


def test_external_mode_rejects_wrong_channels():
    m = build_model(ext_backbone(c=4, h=3, w=3), "gap", None, 4, rng=Rng(0))
    with pytest.raises(ShapeError):
        m.forward(Tensor(np.zeros((1, 3, 3, 3), dtype=np.float32)))


def test_gap_head_output_length_is_spatial_free():
    for h, w in [(8, 8), (16, 16), (16, 24)]:
        m = build_model(tiny_backbone(h, w), "gap", None, 4, rng=Rng(0))
        x = Tensor(np.zeros((2, 3, h, w), dtype=np.float32))
        fm = m.feature_map(x)
        assert m.head_output(fm).shape == (2, 32)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def small_model(rng_seed=0):
    return build_model(
        BackboneConfig("tiny_cnn", (4, 6), (8, 8)), "lca", LcaConfig(6, 5), 3,
        rng=Rng(rng_seed),
    )


def test_checkpoint_roundtrip_restores_everything(tmp_path):
    m = small_model()
    vel = {p.name: Rng(1).uniform_array(p.shape, -1, 1, dtype=np.float32)
           for p in m.parameters()}
    path = tmp_path / "model.lcac"
    save_checkpoint(m, path, velocities=vel, epoch=17, rng_state=RNG_STATE)

    loaded = load_checkpoint(path)
    assert loaded.epoch == 17
    assert loaded.rng_state == RNG_STATE
    for p in m.parameters():
        np.testing.assert_array_equal(loaded.model.param(p.name).data, p.data)
        np.testing.assert_array_equal(loaded.velocities[p.name], vel[p.name])
    assert loaded.model.backbone == m.backbone
    assert loaded.model.head == m.head
    assert loaded.model.lca_cfg == m.lca_cfg
    assert loaded.model.num_classes == m.num_classes


def test_save_load_save_is_byte_identical(tmp_path):
    m = small_model()
    vel = {p.name: np.zeros(p.shape, dtype=np.float32) for p in m.parameters()}
    a, b = tmp_path / "a.lcac", tmp_path / "b.lcac"
    save_checkpoint(m, a, velocities=vel, epoch=2, rng_state=RNG_STATE)
    loaded = load_checkpoint(a)
    save_checkpoint(loaded.model, b, velocities=loaded.velocities, epoch=loaded.epoch,
                    rng_state=loaded.rng_state)
    assert a.read_bytes() == b.read_bytes()


def test_logits_identical_after_roundtrip(tmp_path):
    m = small_model()
    path = tmp_path / "m.lcac"
    save_checkpoint(m, path, velocities={}, epoch=0, rng_state=RNG_STATE)
    x = Tensor(Rng(9).uniform_array((2, 3, 8, 8), 0, 1, dtype=np.float32))
    np.testing.assert_array_equal(
        load_checkpoint(path).model.forward(x).data, m.forward(x).data
    )


def test_velocity_subset_is_legal(tmp_path):
    """A frozen backbone keeps velocities only for the head parameters."""
    m = small_model()
    vel = {"fc_weight": np.zeros((5, 6), dtype=np.float32)}
    path = tmp_path / "m.lcac"
    save_checkpoint(m, path, velocities=vel, epoch=1, rng_state=RNG_STATE)
    assert set(load_checkpoint(path).velocities) == {"fc_weight"}


def test_velocity_for_unknown_param_rejected(tmp_path):
    m = small_model()
    with pytest.raises(CheckpointError):
        save_checkpoint(m, tmp_path / "m.lcac",
                        velocities={"bogus": np.zeros(1, dtype=np.float32)},
                        epoch=0, rng_state=RNG_STATE)


class TestCorruptFiles:
    @pytest.fixture()
    def blob(self, tmp_path):
        path = tmp_path / "m.lcac"
        save_checkpoint(small_model(), path, velocities={}, epoch=3,
                        rng_state=RNG_STATE)
        return path, path.read_bytes()

    def test_truncated_by_one_byte(self, blob):
        path, raw = blob
        path.write_bytes(raw[:-1])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_heavily_truncated(self, blob):
        path, raw = blob
        path.write_bytes(raw[: len(raw) // 3])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic(self, blob):
        path, raw = blob
        path.write_bytes(b"NOPE" + raw[4:])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_unknown_version(self, blob):
        path, raw = blob
        path.write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
        with pytest.raises(CheckpointError) as exc:
            load_checkpoint(path)
        assert "version" in str(exc.value)

    def test_trailing_garbage(self, blob):
        path, raw = blob
        path.write_bytes(raw + b"\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_bad_rng_state_length_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(small_model(), tmp_path / "m.lcac", velocities={},
                        epoch=0, rng_state=b"\x00" * 31)


def test_atomic_write_leaves_no_temp_file(tmp_path):
    path = tmp_path / "m.lcac"
    save_checkpoint(small_model(), path, velocities={}, epoch=0,
                    rng_state=RNG_STATE)
    assert [p.name for p in tmp_path.iterdir()] == ["m.lcac"]


# ---------------------------------------------------------------------------
# training-continuation equivalence (in-memory, fixed batch)
# ---------------------------------------------------------------------------


def _loss_on(m, x, labels):
    return max_entropy_loss(m.forward(x), labels, LossConfig(0.1))


def test_save_load_midway_reproduces_straight_run_bit_exactly(tmp_path):
    """5 optimizer steps straight vs 3 + checkpoint + 2 on one fixed batch."""
    x = Tensor(Rng(20).uniform_array((4, 3, 8, 8), 0, 1, dtype=np.float32))
    labels = np.array([0, 1, 2, 0], dtype=np.int64)

    def fresh():
        m = small_model(rng_seed=42)
        return m, SGD(m.parameters(), lr=0.05, momentum=0.9)

    def step(m, opt):
        loss = _loss_on(m, x, labels)
        T.backward(loss)
        opt.step()
        return loss.item()

    straight_m, straight_opt = fresh()
    for _ in range(5):
        straight_loss = step(straight_m, straight_opt)

    m, opt = fresh()
    for _ in range(3):
        step(m, opt)
    path = tmp_path / "mid.lcac"
    save_checkpoint(m, path, velocities=opt.velocity, epoch=3,
                    rng_state=RNG_STATE)

    loaded = load_checkpoint(path)
    m2 = loaded.model
    opt2 = SGD(m2.parameters(), lr=0.05, momentum=0.9)
    opt2.velocity.update(loaded.velocities)
    for _ in range(2):
        resumed_loss = step(m2, opt2)

    assert np.float32(straight_loss) == np.float32(resumed_loss)
    for p in straight_m.parameters():
        np.testing.assert_array_equal(p.data, m2.param(p.name).data)
