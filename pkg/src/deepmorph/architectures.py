"""Declarative builders for the morphological networks and desk-scale baselines.

All networks take 224x224 inputs.  Morphological layers list their neuron
mix explicitly; the two depthwise stages of a layer share the kernel size
and may differ in stride/padding (given as stage-1/stage-2 pairs).
Pointwise combinations inside neurons are always 1x1, stride 1, no
padding.  No activation follows a morphological layer; fully connected
heads use ReLU except for the final logits layer.
"""

import numpy as np

from .morph import MorphLayer, NeuronSpec
from .nn import Conv2D, Flatten, FullyConnected, MaxPool2D, Network, ReLU, derive_rng

INPUT_HW = (224, 224)


def _specs(kind_counts, size, s1, p1, s2, p2):
    specs = []
    for kind, count in kind_counts:
        specs.extend([NeuronSpec(kind, size, s1, p1, s2, p2)] * count)
    return specs


def build_synnet(classes, in_channels=1, rng=None, reconstruction_dilate_se=True):
    """Single opening neuron (11x11, stride 1, padding 5) plus a linear head."""
    rng = np.random.default_rng(rng)
    h, w = INPUT_HW
    morph = MorphLayer(
        _specs([("opening", 1)], 11, 1, 5, 1, 5),
        in_channels, INPUT_HW, rng, name="morph1",
        reconstruction_dilate_se=reconstruction_dilate_se,
    )
    layers = [
        morph,
        Flatten(),
        FullyConnected(1 * h * w, classes, rng, name="fc1"),
    ]
    return Network(layers, meta={"architecture": "synnet"})


def build_morph_lenet(classes, in_channels=1, rng=None, reconstruction_dilate_se=True):
    """Two morphological layers (6 and 16 neurons) and a 120-84-classes head."""
    rng = np.random.default_rng(rng)
    layer1 = MorphLayer(
        _specs([("composed_dilation_first", 3), ("composed_erosion_first", 3)], 5, 2, 2, 2, 2),
        in_channels, INPUT_HW, rng, name="morph1",
        reconstruction_dilate_se=reconstruction_dilate_se,
    )
    mix2 = [
        ("composed_dilation_first", 3),
        ("composed_erosion_first", 3),
        ("rec_by_erosion", 3),
        ("rec_by_dilation", 2),
        ("white_tophat", 2),
        ("black_tophat", 3),
    ]
    layer2 = MorphLayer(
        _specs(mix2, 5, 1, 2, 1, 2), 6, (56, 56), rng, name="morph2",
        reconstruction_dilate_se=reconstruction_dilate_se,
    )
    layers = [
        layer1,
        layer2,
        Flatten(),
        FullyConnected(16 * 56 * 56, 120, rng, name="fc1"),
        ReLU(),
        FullyConnected(120, 84, rng, name="fc2"),
        ReLU(),
        FullyConnected(84, classes, rng, name="fc3"),
    ]
    return Network(layers, meta={"architecture": "morph-lenet"})


def build_morph_alexnet(classes, in_channels=3, rng=None, reconstruction_dilate_se=True):
    """Five morphological layers (8/24/48/32/32 neurons) and a 512-512 head."""
    rng = np.random.default_rng(rng)
    composed = [("composed_dilation_first", 1), ("composed_erosion_first", 1)]

    def even(n):
        return [(kind, n // 2) for kind, _ in composed]

    full_mix = ("composed_dilation_first", "composed_erosion_first", "rec_by_erosion",
                "rec_by_dilation", "white_tophat", "black_tophat")
    layer1 = MorphLayer(_specs(even(8), 11, 1, 5, 5, 2), in_channels, INPUT_HW, rng,
                        name="morph1", reconstruction_dilate_se=reconstruction_dilate_se)
    layer2 = MorphLayer(_specs([(k, 4) for k in full_mix], 5, 1, 2, 1, 2), 8, (44, 44), rng,
                        name="morph2", reconstruction_dilate_se=reconstruction_dilate_se)
    layer3 = MorphLayer(_specs(even(48), 3, 1, 1, 3, 0), 24, (44, 44), rng,
                        name="morph3", reconstruction_dilate_se=reconstruction_dilate_se)
    mix4 = [
        ("composed_dilation_first", 6),
        ("composed_erosion_first", 6),
        ("rec_by_erosion", 5),
        ("rec_by_dilation", 5),
        ("white_tophat", 5),
        ("black_tophat", 5),
    ]
    layer4 = MorphLayer(_specs(mix4, 3, 1, 1, 1, 1), 48, (14, 14), rng,
                        name="morph4", reconstruction_dilate_se=reconstruction_dilate_se)
    layer5 = MorphLayer(_specs(even(32), 3, 1, 1, 2, 0), 32, (14, 14), rng,
                        name="morph5", reconstruction_dilate_se=reconstruction_dilate_se)
    layers = [
        layer1, layer2, layer3, layer4, layer5,
        Flatten(),
        FullyConnected(32 * 6 * 6, 512, rng, name="fc1"),
        ReLU(),
        FullyConnected(512, 512, rng, name="fc2"),
        ReLU(),
        FullyConnected(512, classes, rng, name="fc3"),
    ]
    return Network(layers, meta={"architecture": "morph-alexnet"})


def build_classification_layer(classes, in_channels=1, rng=None):
    """Flatten + one fully connected layer straight to the logits."""
    rng = np.random.default_rng(rng)
    h, w = INPUT_HW
    return Network(
        [Flatten(), FullyConnected(in_channels * h * w, classes, rng, name="fc1")],
        meta={"architecture": "cls-layer"},
    )


def build_conv_synnet(classes, in_channels=1, rng=None):
    """Convolutional twin of the opening network.

    Each morphological stage becomes a 1-filter 11x11 convolution
    (stride 1, padding 5) with ReLU, followed by a 2x2/2 max-pool:
    224 -> conv -> pool 112 -> conv -> pool 56 -> linear head.
    """
    rng = np.random.default_rng(rng)
    layers = [
        Conv2D(in_channels, 1, 11, 1, 5, rng, name="conv1"),
        ReLU(),
        MaxPool2D(2, 2, name="pool1"),
        Conv2D(1, 1, 11, 1, 5, rng, name="conv2"),
        ReLU(),
        MaxPool2D(2, 2, name="pool2"),
        Flatten(),
        FullyConnected(56 * 56, classes, rng, name="fc1"),
    ]
    return Network(layers, meta={"architecture": "conv-synnet"})


def build_conv_lenet(classes, in_channels=1, rng=None):
    """Convolutional twin of the 6/16 morphological layers.

    One convolution per morphological layer, keeping its kernel size and
    the stage-1 stride/padding, with ReLU and a 2x2/2 max-pool after each:
    224 -> conv(6,5x5,s2,p2) 112 -> pool 56 -> conv(16,5x5,s1,p2) 56 ->
    pool 28 -> 120 -> 84 -> classes.
    """
    rng = np.random.default_rng(rng)
    layers = [
        Conv2D(in_channels, 6, 5, 2, 2, rng, name="conv1"),
        ReLU(),
        MaxPool2D(2, 2, name="pool1"),
        Conv2D(6, 16, 5, 1, 2, rng, name="conv2"),
        ReLU(),
        MaxPool2D(2, 2, name="pool2"),
        Flatten(),
        FullyConnected(16 * 28 * 28, 120, rng, name="fc1"),
        ReLU(),
        FullyConnected(120, 84, rng, name="fc2"),
        ReLU(),
        FullyConnected(84, classes, rng, name="fc3"),
    ]
    return Network(layers, meta={"architecture": "conv-lenet"})


_BUILDERS = {
    "synnet": build_synnet,
    "morph-lenet": build_morph_lenet,
    "morph-alexnet": build_morph_alexnet,
    "cls-layer": build_classification_layer,
    "conv-synnet": build_conv_synnet,
    "conv-lenet": build_conv_lenet,
}

ARCHITECTURES = tuple(sorted(_BUILDERS))
MORPHOLOGICAL = ("synnet", "morph-lenet", "morph-alexnet")


def build_network(name, classes, in_channels, seed, reconstruction_dilate_se=True):
    """Build a named architecture with its init drawn from the seed's init stream."""
    if name not in _BUILDERS:
        raise ValueError(f"unknown architecture {name!r}; expected one of {ARCHITECTURES}")
    rng = derive_rng(seed, "init")
    kwargs = {}
    if name in MORPHOLOGICAL:
        kwargs["reconstruction_dilate_se"] = reconstruction_dilate_se
    net = _BUILDERS[name](classes, in_channels=in_channels, rng=rng, **kwargs)
    net.meta.update(
        {
            "classes": int(classes),
            "in_channels": int(in_channels),
            "input_hw": list(INPUT_HW),
            "seed": int(seed),
            "reconstruction_dilate_se": bool(reconstruction_dilate_se),
        }
    )
    return net


def count_parameters(network):
    return int(sum(p.value.size for p in network.parameters()))


def morph_layers(network):
    return [layer for layer in network.layers if isinstance(layer, MorphLayer)]
