import numpy as np
import pytest

from domassim.models import VARIANTS, ModelStack, build_backbone, build_classifier, build_color_module, \
    build_texture_module, compose
from domassim.tensor import ShapeError, Tensor, no_grad


@pytest.mark.parametrize("size", [(32, 32), (16, 24)])
def test_texture_module_shape(rng, size):
    t = build_texture_module(size, 4, seed=0)
    out = t(Tensor(rng.random((2, 1) + size)))
    assert out.shape == (2, 1) + size
    assert t.encode(Tensor(rng.random((2, 1) + size))).shape == (2, 1, size[0] // 4, size[1] // 4)


def test_texture_module_rejects_bad_size():
    with pytest.raises(ShapeError):
        build_texture_module((30, 30))
    with pytest.raises(ShapeError):
        build_texture_module((4, 4))


def test_color_module_range(rng):
    c = build_color_module((16, 16), 4, seed=1)
    out = c(Tensor(rng.standard_normal((3, 1, 16, 16)) * 10)).data
    assert out.shape == (3, 3, 16, 16) and out.min() >= 0 and out.max() <= 1


def test_backbone_and_classifier_shapes(rng):
    feats = build_backbone("smallcnn", 0)(Tensor(rng.random((2, 3, 32, 32))))
    assert feats.shape == (2, 64)
    clf = build_classifier(64, 5, 0.5, 16, seed=0).eval()
    assert clf(feats).shape == (2, 5)
    with pytest.raises(ValueError):
        build_backbone("resnet")


@pytest.mark.parametrize("variant", VARIANTS)
def test_stack_forward(rng, variant):
    s = ModelStack(variant, (16, 16), 3, width=4, hidden=16, seed=0).eval()
    logits, col = s(Tensor(rng.random((2, 1, 16, 16))))
    assert logits.shape == (2, 3) and col.shape == (2, 3, 16, 16)
    if variant == "base":
        x = rng.random((1, 1, 16, 16)).astype(np.float32)
        np.testing.assert_array_equal(s.colorize(Tensor(x)).data, np.repeat(x, 3, axis=1))
    z, _ = s(Tensor(np.zeros((1, 1, 16, 16))))
    assert np.isfinite(z.data).all()


@pytest.mark.parametrize("variant", ["tc", "tc_glcm"])
def test_stack_gradients_reach_every_module(rng, variant):
    s = ModelStack(variant, (16, 16), 2, width=4, hidden=16, seed=0)
    logits, _ = s(Tensor(rng.random((4, 1, 16, 16))))
    logits.sum().backward()
    for child in ("texture", "color", "backbone", "classifier"):
        grads = [p.grad for _, p in getattr(s, child).named_parameters()]
        assert any(g is not None and np.abs(g).sum() > 0 for g in grads), child


def test_stack_determinism(rng):
    x = Tensor(rng.random((2, 1, 16, 16)))
    a = ModelStack("tc", (16, 16), 2, width=4, seed=7).eval()
    b = ModelStack("tc", (16, 16), 2, width=4, seed=7).eval()
    with no_grad():
        assert a(x)[0].data.tobytes() == b(x)[0].data.tobytes()
    c = ModelStack("tc", (16, 16), 2, width=4, seed=8).eval()
    assert c(x)[0].data.tobytes() != a(x)[0].data.tobytes()


def test_stack_parameter_names():
    names = set(ModelStack("tc_glcm", (16, 16), 2, width=4).state_dict())
    assert "texture.encoder.0.weight" in names or any(n.startswith("texture.") for n in names)
    assert any(n.startswith("color.") for n in names)
    assert any(n.startswith("backbone.") for n in names)
    assert any(n.startswith("classifier.fc1") for n in names)
    assert any("running_mean" in n for n in names)
    base = set(ModelStack("base", (16, 16), 2).state_dict())
    assert not any(n.startswith(("texture.", "color.")) for n in base)


def test_stack_junction_errors(rng):
    s = ModelStack("tc", (16, 16), 2, width=4)
    with pytest.raises(ShapeError, match="input junction"):
        s(Tensor(rng.random((1, 3, 16, 16))))
    with pytest.raises(ShapeError, match="input junction"):
        s(Tensor(rng.random((1, 1, 20, 20))))
    with pytest.raises(ValueError):
        ModelStack("resnet", (16, 16))


def test_compose_is_forward(rng):
    s = ModelStack("base", (16, 16), 2).eval()
    x = Tensor(rng.random((1, 1, 16, 16)))
    assert compose(s)(x)[0].data.tobytes() == s(x)[0].data.tobytes()


def test_train_eval_toggle_dropout(rng):
    s = ModelStack("base", (16, 16), 2, dropout_p=0.5, seed=0)
    x = Tensor(rng.random((4, 1, 16, 16)))
    s.eval()
    a = s(x)[0].data
    b = s(x)[0].data
    assert a.tobytes() == b.tobytes()
    assert not s.classifier.drop.training
    s.train()
    assert s.classifier.drop.training
