"""Reference models, loss evaluation and accuracy."""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .exceptions import NonFiniteError
from .seeding import stream_rng

MODEL_NAMES = ("mlp-784-300-100-10", "lenet5-like")


class Model:
    """A feed-forward network whose parameters live in an ordered name map.

    Weight tensors (names ending in ``.weight``) are prunable; biases never
    are.
    """

    name = "model"
    num_classes = 10

    def __init__(self, params):
        self.params: dict[str, ad.Tensor] = dict(params)

    @property
    def prunable(self):
        return [k for k in self.params if k.endswith(".weight")]

    def weights(self):
        """Parameter arrays keyed by name (live views, not copies)."""
        return {k: t.data for k, t in self.params.items()}

    def load_weights(self, arrays):
        for k, arr in arrays.items():
            if self.params[k].shape != arr.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {self.params[k].shape}")
            self.params[k].data[...] = arr

    def clone(self):
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.params = {k: ad.Tensor(t.data.copy()) for k, t in self.params.items()}
        return other

    def forward(self, x, params=None):
        raise NotImplementedError

    def logits(self, x, batch_size=1024):
        """Forward pass without recording, in chunks."""
        x = np.asarray(x)
        return np.concatenate(
            [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        )


def _uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(ad.DTYPE)


class MLP(Model):
    """Fully connected ReLU network."""

    def __init__(self, sizes=(784, 300, 100, 10), seed=0):
        rng = stream_rng(seed, "init")
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
            params[f"fc{i}.weight"] = ad.Tensor(_uniform(rng, (fan_in, fan_out), fan_in))
            params[f"fc{i}.bias"] = ad.Tensor(np.zeros(fan_out, dtype=ad.DTYPE))
        super().__init__(params)
        self.sizes = tuple(sizes)
        self.num_classes = sizes[-1]
        self.name = "mlp-" + "-".join(str(s) for s in sizes)

    def forward(self, x, params=None):
        p = self.params if params is None else params
        h = ad.reshape(x, (len(x.data) if isinstance(x, ad.Tensor) else len(x), -1))
        n_layers = len(self.sizes) - 1
        for i in range(1, n_layers + 1):
            h = ad.add(ad.matmul(h, p[f"fc{i}.weight"]), p[f"fc{i}.bias"])
            if i < n_layers:
                h = ad.relu(h)
        return h


class LeNet5(Model):
    """Two 5x5 conv/maxpool stages followed by two dense layers, for 28x28 input."""

    name = "lenet5-like"

    def __init__(self, seed=0, num_classes=10):
        rng = stream_rng(seed, "init")
        params = {
            "conv1.weight": ad.Tensor(_uniform(rng, (6, 1, 5, 5), 25)),
            "conv1.bias": ad.Tensor(np.zeros(6, dtype=ad.DTYPE)),
            "conv2.weight": ad.Tensor(_uniform(rng, (16, 6, 5, 5), 150)),
            "conv2.bias": ad.Tensor(np.zeros(16, dtype=ad.DTYPE)),
            "fc1.weight": ad.Tensor(_uniform(rng, (256, 120), 256)),
            "fc1.bias": ad.Tensor(np.zeros(120, dtype=ad.DTYPE)),
            "fc2.weight": ad.Tensor(_uniform(rng, (120, num_classes), 120)),
            "fc2.bias": ad.Tensor(np.zeros(num_classes, dtype=ad.DTYPE)),
        }
        super().__init__(params)
        self.num_classes = num_classes

    def forward(self, x, params=None):
        p = self.params if params is None else params
        n = len(x.data) if isinstance(x, ad.Tensor) else len(x)
        h = ad.reshape(x, (n, 1, 28, 28))
        h = ad.maxpool2d(ad.relu(ad.conv2d(h, p["conv1.weight"], p["conv1.bias"])))
        h = ad.maxpool2d(ad.relu(ad.conv2d(h, p["conv2.weight"], p["conv2.bias"])))
        h = ad.relu(ad.add(ad.matmul(ad.reshape(h, (n, 256)), p["fc1.weight"]), p["fc1.bias"]))
        return ad.add(ad.matmul(h, p["fc2.weight"]), p["fc2.bias"])


def build_model(name, seed=0):
    if name == "mlp-784-300-100-10":
        return MLP((784, 300, 100, 10), seed=seed)
    if name == "lenet5-like":
        return LeNet5(seed=seed)
    if name.startswith("mlp-"):
        try:
            sizes = tuple(int(s) for s in name[4:].split("-"))
        except ValueError:
            sizes = ()
        if len(sizes) >= 2 and min(sizes) >= 1:
            return MLP(sizes, seed=seed)
    raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES} or mlp-<sizes>")


def loss(model, features, labels, params=None):
    """Mean cross-entropy of ``model`` on a batch, with gradients.

    Returns:
        ``(value, grads)`` where ``grads`` maps every parameter name to an
        array of the parameter's shape.
    """
    if len(labels) == 0:
        raise ValueError("empty batch")
    base = model.params if params is None else params
    live = {k: ad.Tensor(t.data if isinstance(t, ad.Tensor) else t, requires_grad=True)
            for k, t in base.items()}
    with ad.Tape() as tape:
        out = ad.softmax_crossentropy(model.forward(features, live), labels)
    tape.backward(out)
    value = float(out.data)
    if not math.isfinite(value):
        raise NonFiniteError("non-finite loss")
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in live.items()}
    return value, grads


def loss_value(model, features, labels, params=None, batch_size=1024):
    """Mean cross-entropy without gradients."""
    total = 0.0
    n = len(labels)
    if n == 0:
        raise ValueError("empty batch")
    for i in range(0, n, batch_size):
        logits = model.forward(features[i:i + batch_size], params)
        chunk = ad.softmax_crossentropy(logits, labels[i:i + batch_size])
        total += float(chunk.data) * len(labels[i:i + batch_size])
    value = total / n
    if not math.isfinite(value):
        raise NonFiniteError("non-finite loss")
    return value


def predict(model, features, batch_size=1024):
    # argmax returns the lowest index among ties
    return model.logits(features, batch_size).argmax(axis=1)


def evaluate_accuracy(model, dataset, batch_size=1024):
    """Fraction of samples whose argmax prediction equals the label."""
    if len(dataset.labels) == 0:
        return 0.0
    hits = predict(model, dataset.features, batch_size) == dataset.labels
    return float(np.count_nonzero(hits)) / len(hits)
