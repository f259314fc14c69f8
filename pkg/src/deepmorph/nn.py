"""Layer-based backpropagation engine: classic layers, loss, SGD, training loop.

Layers operate on minibatches stacked along a leading axis, i.e. image
stacks of shape (batch, channels, height, width) or flat feature stacks
of shape (batch, features).  The stack is an internal convention of the
engine; datasets hand over lists of rank-3 images and the loop stacks
them per minibatch.

Each layer caches forward intermediates only when called with
``training=True``; inference passes leave no state behind and are safe
to run concurrently.  Gradients produced by ``backward`` are averaged
over the minibatch because the loss gradient is pre-scaled by 1/batch.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor_ops import ShapeError, conv_output_size, pad2d

# Fixed sub-stream indices so every component can be reseeded in isolation.
_SEED_STREAMS = {"data": 0, "init": 1, "shuffle": 2}


def derive_rng(seed, stream):
    """Named, reproducible RNG sub-stream derived from one experiment seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _SEED_STREAMS[stream]]))


class Parameter:
    """Trainable value with its gradient and momentum buffer (same shape)."""

    __slots__ = ("name", "value", "grad", "momentum")

    def __init__(self, value, name):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.momentum = np.zeros_like(self.value)


class Layer:
    """Base class: forward/backward over a stacked minibatch."""

    name = "layer"

    def params(self):
        return []

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, input_shape):
        raise NotImplementedError


def uniform_init(rng, shape, fan_in):
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class FullyConnected(Layer):
    def __init__(self, n_in, n_out, rng, name="fc"):
        self.name = name
        self.weight = Parameter(uniform_init(rng, (n_out, n_in), n_in), f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out), f"{name}.bias")
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.weight.value.shape[1]:
            raise ShapeError(
                f"{self.name} expects (batch, {self.weight.value.shape[1]}), got {x.shape}"
            )
        if training:
            self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad):
        self.weight.grad += grad.T @ self._x
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value

    def output_shape(self, input_shape):
        return (self.weight.value.shape[0],)


class ReLU(Layer):
    def __init__(self, name="relu"):
        self.name = name
        self._mask = None

    def forward(self, x, training=False):
        if training:
            self._mask = x > 0  # gradient is zero at exactly 0
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return grad * self._mask

    def output_shape(self, input_shape):
        return input_shape


class Flatten(Layer):
    """(batch, c, h, w) -> (batch, c*h*w); channel-major then row-major."""

    def __init__(self, name="flatten"):
        self.name = name
        self._shape = None

    def forward(self, x, training=False):
        if training:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


class Conv2D(Layer):
    """Standard trainable convolution (cross-correlation) with bias."""

    def __init__(self, in_channels, out_channels, size, stride, padding, rng, name="conv"):
        self.name = name
        self.size = size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * size * size
        self.weight = Parameter(
            uniform_init(rng, (out_channels, in_channels, size, size), fan_in), f"{name}.weight"
        )
        self.bias = Parameter(np.zeros(out_channels), f"{name}.bias")
        self._xpad = None

    def params(self):
        return [self.weight, self.bias]

    def _win(self, xpad):
        win = sliding_window_view(xpad, (self.size, self.size), axis=(2, 3))
        return win[:, :, :: self.stride, :: self.stride]

    def forward(self, x, training=False):
        if x.shape[1] != self.weight.value.shape[1]:
            raise ShapeError(
                f"{self.name}: input channels {x.shape[1]} != kernel depth "
                f"{self.weight.value.shape[1]}"
            )
        xpad = pad2d(x, self.padding)
        if training:
            self._xpad = xpad
        out = np.einsum(
            "kcmn,bchwmn->bkhw", self.weight.value, self._win(xpad), optimize=True
        )
        return out + self.bias.value[None, :, None, None]

    def backward(self, grad):
        win = self._win(self._xpad)
        self.weight.grad += np.einsum("bkhw,bchwmn->kcmn", grad, win, optimize=True)
        self.bias.grad += grad.sum(axis=(0, 2, 3))
        gxpad = np.zeros_like(self._xpad)
        h_out, w_out = grad.shape[2], grad.shape[3]
        hi = (h_out - 1) * self.stride + 1
        wi = (w_out - 1) * self.stride + 1
        for m in range(self.size):
            for n in range(self.size):
                view = gxpad[:, :, m : m + hi : self.stride, n : n + wi : self.stride]
                view += np.einsum("bkhw,kc->bchw", grad, self.weight.value[:, :, m, n])
        p = self.padding
        if p:
            return gxpad[:, :, p:-p, p:-p]
        return gxpad

    def output_shape(self, input_shape):
        c, h, w = input_shape
        return (
            self.weight.value.shape[0],
            conv_output_size(h, self.size, self.stride, self.padding),
            conv_output_size(w, self.size, self.stride, self.padding),
        )


class MaxPool2D(Layer):
    def __init__(self, window, stride, name="pool"):
        self.name = name
        self.window = window
        self.stride = stride
        self._argmax = None
        self._in_hw = None

    def forward(self, x, training=False):
        win = sliding_window_view(x, (self.window, self.window), axis=(2, 3))
        win = win[:, :, :: self.stride, :: self.stride]
        b, c, h2, w2 = win.shape[:4]
        flat = win.reshape(b, c, h2, w2, self.window * self.window)
        if training:
            self._argmax = np.argmax(flat, axis=-1)  # first max wins ties
            self._in_hw = x.shape[2:]
        return flat.max(axis=-1)

    def backward(self, grad):
        b, c, h2, w2 = grad.shape
        gx = np.zeros((b, c) + self._in_hw)
        hi = (h2 - 1) * self.stride + 1
        wi = (w2 - 1) * self.stride + 1
        for q in range(self.window * self.window):
            sel = self._argmax == q
            if not sel.any():
                continue
            m, n = divmod(q, self.window)
            view = gx[:, :, m : m + hi : self.stride, n : n + wi : self.stride]
            view[sel] += grad[sel]
        return gx

    def output_shape(self, input_shape):
        c, h, w = input_shape
        return (
            c,
            conv_output_size(h, self.window, self.stride, 0),
            conv_output_size(w, self.window, self.stride, 0),
        )


def softmax_cross_entropy(logits, targets):
    """Mean cross-entropy over the batch and its gradient on the logits.

    Numerically stabilized by subtracting the max logit.  The returned
    gradient is (softmax - one_hot) / batch, so downstream parameter
    gradients come out batch-averaged.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"logits must be (batch, classes>=2), got {logits.shape}")
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise ValueError("target class out of range")
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    picked = shifted[np.arange(b), targets] - np.log(exp.sum(axis=1))
    loss = -picked.mean()
    grad = probs.copy()
    grad[np.arange(b), targets] -= 1.0
    return loss, grad / b


class Network:
    """Plain sequential container with named parameters."""

    def __init__(self, layers, meta=None):
        self.layers = list(layers)
        self.meta = dict(meta or {})

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        return [p for layer in self.layers for p in layer.params()]

    def param_dict(self):
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def load_values(self, values):
        params = self.param_dict()
        missing = set(params) - set(values)
        extra = set(values) - set(params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in params.items():
            v = np.asarray(values[name], dtype=np.float64)
            if v.shape != p.value.shape:
                raise ValueError(f"{name}: shape {v.shape} != expected {p.value.shape}")
            p.value[...] = v

    def shape_audit(self, input_shape):
        """Propagate a shape through output_shape() and an actual probe tensor."""
        shapes = [tuple(input_shape)]
        for layer in self.layers:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        probe = np.zeros((1,) + tuple(input_shape))
        x = probe
        for layer, expect in zip(self.layers, shapes[1:]):
            x = layer.forward(x)
            if x.shape[1:] != expect:
                raise ShapeError(
                    f"{layer.name}: declared output {expect} but probe produced {x.shape[1:]}"
                )
        return shapes


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 0.0005
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class EpochMetrics:
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class Metrics:
    epochs: list = field(default_factory=list)
    test_accuracy: float = 0.0

    def csv_lines(self):
        lines = ["epoch,train_loss,train_acc,val_acc"]
        for i, e in enumerate(self.epochs, start=1):
            lines.append(f"{i},{e.train_loss!r},{e.train_acc!r},{e.val_acc!r}")
        return lines


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries a diagnostic snapshot of the run."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


def sgd_step(params, config):
    """Heavy-ball SGD: v <- m*v - lr*(g + wd*w); w <- w + v; grads zeroed."""
    lr = config.learning_rate
    wd = config.weight_decay
    m = config.momentum
    for p in params:
        g = p.grad
        if wd:
            g = g + wd * p.value
        p.momentum *= m
        p.momentum -= lr * g
        p.value += p.momentum
        p.grad[...] = 0.0


def stack_images(samples):
    return np.stack([np.asarray(s.image, dtype=np.float64) for s in samples])


def _accuracy_counts(logits, labels):
    return int((np.argmax(logits, axis=1) == labels).sum())


def evaluate(network, samples, batch_size=16):
    """Accuracy percentage under lowest-index argmax over the logits."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    correct = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        logits = network.forward(stack_images(chunk))
        correct += _accuracy_counts(logits, np.array([s.label for s in chunk]))
    return 100.0 * correct / len(samples)


def train(network, train_samples, val_samples, test_samples, config, progress=None):
    """Run the full epoch loop and return per-epoch metrics plus test accuracy.

    Shuffling draws from the 'shuffle' sub-stream of config.seed, so two
    runs with identical configs are bit-identical.  Aborts with
    TrainingDiverged (including a state snapshot) if the loss goes
    non-finite.
    """
    if not train_samples or not val_samples or not test_samples:
        raise ValueError("all dataset splits must be non-empty")
    shuffle_rng = derive_rng(config.seed, "shuffle")
    params = network.parameters()
    metrics = Metrics()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_samples))
        loss_sum = 0.0
        correct = 0
        for bstart in range(0, len(order), config.batch_size):
            idx = order[bstart : bstart + config.batch_size]
            batch = [train_samples[i] for i in idx]
            labels = np.array([s.label for s in batch])
            logits = network.forward(stack_images(batch), training=True)
            loss, grad = softmax_cross_entropy(logits, labels)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite ({loss}) at epoch {epoch + 1}, "
                    f"batch {bstart // config.batch_size}",
                    state={
                        "epoch": epoch + 1,
                        "batch": bstart // config.batch_size,
                        "loss": float(loss),
                        "param_norms": {p.name: float(np.abs(p.value).max()) for p in params},
                    },
                )
            loss_sum += loss * len(batch)
            correct += _accuracy_counts(logits, labels)
            network.backward(grad)
            sgd_step(params, config)
        epoch_metrics = EpochMetrics(
            train_loss=loss_sum / len(order),
            train_acc=100.0 * correct / len(order),
            val_acc=evaluate(network, val_samples, config.batch_size),
        )
        metrics.epochs.append(epoch_metrics)
        if progress is not None:
            progress(epoch + 1, epoch_metrics)
    metrics.test_accuracy = evaluate(network, test_samples, config.batch_size)
    return metrics


def gradcheck(network, x, target, params=None, eps=1e-5, max_entries=None, rng=None):
    """Max relative error between analytic and central finite-difference grads.

    Only makes sense for parameters the loss is differentiable in
    (pointwise/fully connected weights and biases; binarized banks are
    excluded by the caller).  With max_entries set, a deterministic random
    subset of coordinates per parameter is probed instead of all of them.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    targets = np.atleast_1d(np.asarray(target))
    if params is None:
        params = network.parameters()

    def loss_only():
        return softmax_cross_entropy(network.forward(x), targets)[0]

    for p in network.parameters():
        p.grad[...] = 0.0
    logits = network.forward(x, training=True)
    _, grad = softmax_cross_entropy(logits, targets)
    network.backward(grad)

    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            indices = rng.choice(flat.size, size=max_entries, replace=False)
        for i in indices:
            keep = flat[i]
            flat[i] = keep + eps
            up = loss_only()
            flat[i] = keep - eps
            down = loss_only()
            flat[i] = keep
            fd = (up - down) / (2 * eps)
            rel = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-6)
            worst = max(worst, rel)
    for p in network.parameters():
        p.grad[...] = 0.0
    return worst
