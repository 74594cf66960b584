"""Texture module, color module, backbone and classifier, plus their composition."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .nn import (BatchNorm2d, Conv2d, ConvTranspose2d, Dropout, GlobalAvgPool, Linear, MaxPool2d, Module, ReLU,
                 Sequential, Sigmoid)
from .tensor import ShapeError, Tensor, as_tensor, concatenate

VARIANTS = ("base", "tc", "tc_glcm")


@dataclass
class LayerDesc:
    kind: str
    channels: int = 0
    kernel: int = 0
    stride: int = 1
    activation: str = ""


def _check_size(input_size, minimum=8):
    h, w = input_size
    if h < minimum or w < minimum or h % 4 or w % 4:
        raise ShapeError(f"input size {h}x{w} too small or not divisible by 4 for two pooling stages")


class TextureModule(Module):
    """Small conv autoencoder with a single-channel bottleneck.

    encoder: [conv3x3 -> BN -> ReLU -> maxpool2] x 2, widths (width, 1);
    decoder: two stride-2 transposed convs back to input resolution.
    """

    def __init__(self, input_size=(32, 32), width=8, rng=None):
        super().__init__()
        _check_size(input_size)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_size = tuple(input_size)
        self.encoder = self.add_child("encoder", Sequential(
            Conv2d(1, width, 3, padding=1, rng=rng), BatchNorm2d(width), ReLU(), MaxPool2d(2),
            Conv2d(width, 1, 3, padding=1, rng=rng), BatchNorm2d(1), ReLU(), MaxPool2d(2),
        ))
        self.decoder = self.add_child("decoder", Sequential(
            ConvTranspose2d(1, width, 2, stride=2, rng=rng), ReLU(),
            ConvTranspose2d(width, 1, 2, stride=2, rng=rng),
        ))
        self.layers = [
            LayerDesc("conv", width, 3, 1, "bn+relu"), LayerDesc("maxpool", width, 2, 2),
            LayerDesc("conv", 1, 3, 1, "bn+relu"), LayerDesc("maxpool", 1, 2, 2),
            LayerDesc("tconv", width, 2, 2, "relu"), LayerDesc("tconv", 1, 2, 2),
        ]

    def encode(self, x):
        return self.encoder(x)

    def forward(self, x):
        return self.decoder(self.encoder(x))


class ColorModule(Module):
    """conv3x3 -> BN -> ReLU -> 1x1 projection to RGB -> sigmoid."""

    def __init__(self, input_size=(32, 32), width=8, rng=None):
        super().__init__()
        _check_size(input_size)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_size = tuple(input_size)
        self.body = self.add_child("body", Sequential(
            Conv2d(1, width, 3, padding=1, rng=rng), BatchNorm2d(width), ReLU(),
            Conv2d(width, 3, 1, rng=rng), Sigmoid(),
        ))
        self.layers = [LayerDesc("conv", width, 3, 1, "bn+relu"), LayerDesc("conv", 3, 1, 1, "sigmoid")]

    def forward(self, x):
        return self.body(x)


class SmallCNN(Module):
    """Three conv-BN-ReLU-pool stages (3->16->32->64) and global average pooling."""

    feature_dim = 64

    def __init__(self, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        layers = []
        for cin, cout in ((3, 16), (16, 32), (32, 64)):
            layers += [Conv2d(cin, cout, 3, padding=1, rng=rng), BatchNorm2d(cout), ReLU(), MaxPool2d(2)]
        self.features = self.add_child("features", Sequential(*layers))
        self.pool = GlobalAvgPool()
        self.layers = [LayerDesc("conv", c, 3, 1, "bn+relu+pool") for c in (16, 32, 64)] + [LayerDesc("gap", 64)]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"backbone expects (N,3,H,W), got {x.shape}")
        return self.pool(self.features(x))


class Classifier(Module):
    """dense -> ReLU -> dropout -> dense."""

    def __init__(self, feature_dim=64, num_classes=2, dropout_p=0.5, hidden=128, rng=None, seed=0):
        super().__init__()
        if feature_dim < 1 or num_classes < 1 or hidden < 1:
            raise ValueError("classifier dimensions must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.fc1 = self.add_child("fc1", Linear(feature_dim, hidden, rng=rng))
        self.drop = self.add_child("drop", Dropout(dropout_p, seed=seed))
        self.fc2 = self.add_child("fc2", Linear(hidden, num_classes, rng=rng))
        self.layers = [LayerDesc("dense", hidden, activation="relu"), LayerDesc("dropout"),
                       LayerDesc("dense", num_classes)]

    def forward(self, x):
        return self.fc2(self.drop(self.fc1(x).relu()))


def build_texture_module(input_size=(32, 32), width=8, seed=0) -> TextureModule:
    return TextureModule(input_size, width, rng=np.random.default_rng(seed))


def build_color_module(input_size=(32, 32), width=8, seed=0) -> ColorModule:
    return ColorModule(input_size, width, rng=np.random.default_rng(seed))


def build_backbone(spec="smallcnn", seed=0) -> SmallCNN:
    """``spec`` is "smallcnn" or "checkpoint:<path>" (backbone weights are read from a checkpoint file)."""
    net = SmallCNN(rng=np.random.default_rng(seed))
    if spec == "smallcnn":
        return net
    if isinstance(spec, str) and spec.startswith("checkpoint:"):
        from .checkpoint import load_module_weights
        load_module_weights(net, spec[len("checkpoint:"):], prefix="backbone.")
        return net
    raise ValueError(f"unknown backbone spec {spec!r}; use 'smallcnn' or 'checkpoint:<path>'")


def build_classifier(feature_dim=64, num_classes=2, dropout_p=0.5, hidden=128, seed=0) -> Classifier:
    return Classifier(feature_dim, num_classes, dropout_p, hidden, rng=np.random.default_rng(seed), seed=seed)


class ModelStack(Module):
    """F(B(C(T(x)))) for variants ``tc``/``tc_glcm``; F(B(repeat3(x))) for ``base``.

    Calling the stack returns ``(logits, colorized)`` where ``colorized`` is
    the 3-channel image handed to the backbone.
    """

    def __init__(self, variant="base", input_size=(32, 32), num_classes=2, width=8, dropout_p=0.5,
                 hidden=128, backbone="smallcnn", seed=0):
        super().__init__()
        variant = variant.replace("-", "_")
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.input_size = tuple(input_size)
        self.num_classes = num_classes
        self.width = width
        self.dropout_p = dropout_p
        self.hidden = hidden
        self.backbone_name = "smallcnn"
        self.texture: Optional[TextureModule] = None
        self.color: Optional[ColorModule] = None
        if variant != "base":
            self.texture = self.add_child("texture", build_texture_module(input_size, width, seed + 1))
            self.color = self.add_child("color", build_color_module(input_size, width, seed + 2))
        self.backbone = self.add_child("backbone", build_backbone(backbone, seed + 3))
        self.classifier = self.add_child("classifier", build_classifier(
            SmallCNN.feature_dim, num_classes, dropout_p, hidden, seed + 4))

    def config(self) -> dict:
        return {"variant": self.variant, "input_size": self.input_size, "num_classes": self.num_classes,
                "width": self.width, "dropout_p": self.dropout_p, "hidden": self.hidden}

    def colorize(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"input junction: expected (N,1,H,W), got {x.shape}")
        if tuple(x.shape[2:]) != self.input_size:
            raise ShapeError(f"input junction: expected spatial size {self.input_size}, got {tuple(x.shape[2:])}")
        if self.variant == "base":
            return concatenate([x, x, x], axis=1)
        t = self.texture(x)
        if t.shape != x.shape:
            raise ShapeError(f"texture->color junction: expected {x.shape}, got {t.shape}")
        c = self.color(t)
        if c.shape != (x.shape[0], 3) + x.shape[2:]:
            raise ShapeError(f"color->backbone junction: unexpected shape {c.shape}")
        return c

    def forward(self, x) -> Tuple[Tensor, Tensor]:
        x = as_tensor(x)
        colorized = self.colorize(x)
        feats = self.backbone(colorized)
        if feats.shape[1] != SmallCNN.feature_dim:
            raise ShapeError(f"backbone->classifier junction: expected {SmallCNN.feature_dim} features, got {feats.shape}")
        return self.classifier(feats), colorized

    def logits(self, x) -> Tensor:
        return self.forward(x)[0]


def compose(stack: ModelStack):
    """Forward function ``x -> (logits, colorized)`` of a stack."""
    return stack.forward
