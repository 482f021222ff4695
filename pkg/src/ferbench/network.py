"""Layer-spec driven CNN with a global-average-pool + linear head.

The head structure (GAP then a single linear layer) is enforced because the
class-activation saliency method reads the head weights directly against the
pre-pool feature maps.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"ATCW"
CHECKPOINT_VERSION = 1


class Network:
    """Ordered layer specs plus named parameter tensors.

    Layer spec kinds: conv2d, relu, avg_pool, global_avg_pool, linear.
    The final two layers must be global_avg_pool then linear.
    """

    def __init__(self, layers, parameters, head_class_count):
        self.layers = list(layers)
        self.parameters = dict(parameters)
        self.head_class_count = head_class_count
        self._gap_input = None
        self._logits = None
        self._input = None
        self._validate()

    def _validate(self):
        if len(self.layers) < 2 or self.layers[-2]["kind"] != "global_avg_pool" \
                or self.layers[-1]["kind"] != "linear":
            raise ValueError("network must end in global_avg_pool followed by a single linear layer")
        if sum(1 for l in self.layers if l["kind"] == "linear") != 1:
            raise ValueError("network must contain exactly one linear layer (the head)")
        head = self.layers[-1]
        if head["out_features"] != self.head_class_count:
            raise ValueError(f"head outputs {head['out_features']} classes, expected {self.head_class_count}")
        for spec in self.layers:
            if spec["kind"] == "conv2d":
                w = self.parameters[spec["name"] + ".weight"]
                expect = (spec["out_channels"], spec["in_channels"], spec["kernel"], spec["kernel"])
                if tuple(w.shape) != expect:
                    raise ValueError(f"{spec['name']}: weight shape {w.shape} != {expect}")
                if tuple(self.parameters[spec["name"] + ".bias"].shape) != (spec["out_channels"],):
                    raise ValueError(f"{spec['name']}: bias shape mismatch")
            elif spec["kind"] == "linear":
                w = self.parameters[spec["name"] + ".weight"]
                expect = (spec["out_features"], spec["in_features"])
                if tuple(w.shape) != expect:
                    raise ValueError(f"{spec['name']}: weight shape {w.shape} != {expect}")

    def in_channels(self):
        for spec in self.layers:
            if spec["kind"] == "conv2d":
                return spec["in_channels"]
        return self.layers[-1]["in_features"]

    def param_names(self):
        names = []
        for spec in self.layers:
            if spec["kind"] in ("conv2d", "linear"):
                names.append(spec["name"] + ".weight")
                names.append(spec["name"] + ".bias")
        return names

    def layer_manifest(self):
        return json.dumps(self.layers, sort_keys=True)

    def zero_grad(self):
        for p in self.parameters.values():
            p.grad = None

    def forward(self, batch, record=True):
        """Run the network; returns the logits tensor.

        batch: Tensor or ndarray [N,C,H,W]. With record=False parameters are
        detached so no graph is built (read-only evaluation).
        """
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
        if x.data.ndim != 4:
            raise ValueError(f"input must be [N,C,H,W], got shape {x.data.shape}")
        if x.data.shape[1] != self.in_channels():
            raise ValueError(
                f"input has {x.data.shape[1]} channels, first conv layer expects {self.in_channels()}")
        params = self.parameters
        if not record:
            params = {k: Tensor(v.data) for k, v in params.items()}
        self._gap_input = None
        self._activations = []
        for i, spec in enumerate(self.layers):
            kind = spec["kind"]
            self._activations.append((kind, x))
            try:
                if kind == "conv2d":
                    x = T.conv2d(x, params[spec["name"] + ".weight"],
                                 params[spec["name"] + ".bias"], padding=spec["padding"])
                elif kind == "relu":
                    x = T.relu(x)
                elif kind == "avg_pool":
                    x = T.avg_pool2d(x, spec["size"])
                elif kind == "global_avg_pool":
                    self._gap_input = x
                    x = T.global_avg_pool(x)
                elif kind == "linear":
                    x = T.matmul_linear(x, params[spec["name"] + ".weight"],
                                        params[spec["name"] + ".bias"])
                else:
                    raise ValueError(f"unknown layer kind {kind!r}")
            except ValueError as e:
                raise ValueError(f"layer {i} ({kind}): {e}") from None
        self._logits = x
        return x

    def relu_kink_margin(self):
        """Smallest |pre-activation| across relu layers of the last forward.

        Finite-difference gradient checks are only meaningful when no relu
        input sits within the perturbation step of zero.
        """
        margins = [float(np.abs(x.data).min()) for kind, x in self._activations if kind == "relu"]
        return min(margins) if margins else np.inf

    def features_before_gap(self):
        """Pre-pool feature maps retained by the last forward call."""
        if self._gap_input is None:
            raise RuntimeError("no forward pass recorded; run forward first")
        return self._gap_input

    def logits_from_features(self, features):
        """Apply only the GAP + linear head to raw feature maps [N,C,Hf,Wf]."""
        pooled = np.asarray(features).mean(axis=(2, 3))
        head = self.layers[-1]
        w = self.parameters[head["name"] + ".weight"].data
        b = self.parameters[head["name"] + ".bias"].data
        return pooled @ w.T + b

    def head_weights(self):
        head = self.layers[-1]
        return self.parameters[head["name"] + ".weight"].data

    def backward(self, loss):
        """Backpropagate a scalar loss produced by the last forward."""
        if self._logits is None:
            raise RuntimeError("backward before forward")
        loss.backward()

    def predict_logits(self, batch):
        """Graph-free forward; returns a plain [N,K] ndarray."""
        return self.forward(batch, record=False).data

    def copy(self):
        params = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad)
                  for k, v in self.parameters.items()}
        return Network([dict(l) for l in self.layers], params, self.head_class_count)


def _uniform_fan_in(rng, shape, fan_in, dtype, gain=1.0):
    # Kaiming-style uniform: std = gain / sqrt(fan_in), so bound = gain * sqrt(3 / fan_in).
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def make_small_cnn(in_channels=3, num_classes=2, conv_channels=(8, 16, 32),
                   kernel=3, pool=2, seed=0, dtype=np.float32, head_gain=0.1):
    """Fixed small architecture: 3x (conv-relu-avgpool), then GAP and a linear head.

    Conv weights use He-uniform init (gain sqrt(2)) with zero biases; without
    normalization layers anything smaller contracts input differences toward a
    constant and stalls optimization at small learning rates.

    `head_gain` scales the head's init.  Softmax cross-entropy sends zero
    gradient along the all-classes logit direction, so whatever common mode
    the head rows start with is frozen for the whole run: a random head
    leaves every logit carrying an untrained random projection of the
    features.   Training therefore passes head_gain=0.0, which pins the row
    sum at zero so a two-class head stays exactly antisymmetric and the
    winning logit equals the (nonnegative) half-margin.  Gradient checks
    keep the random default: a zero head would zero every conv gradient and
    make finite-difference comparison vacuous.
    """
    rng = np.random.default_rng(seed)
    layers = []
    params = {}
    c_in = in_channels
    pad = kernel // 2
    for i, c_out in enumerate(conv_channels):
        name = f"conv{i}"
        layers.append({"kind": "conv2d", "name": name, "in_channels": c_in,
                       "out_channels": c_out, "kernel": kernel, "padding": pad})
        fan_in = c_in * kernel * kernel
        params[name + ".weight"] = Tensor(
            _uniform_fan_in(rng, (c_out, c_in, kernel, kernel), fan_in, dtype,
                            gain=np.sqrt(2.0)), requires_grad=True)
        params[name + ".bias"] = Tensor(
            np.zeros(c_out, dtype=dtype), requires_grad=True)
        layers.append({"kind": "relu"})
        layers.append({"kind": "avg_pool", "size": pool})
        c_in = c_out
    layers.append({"kind": "global_avg_pool"})
    layers.append({"kind": "linear", "name": "head", "in_features": c_in,
                   "out_features": num_classes})
    if head_gain == 0.0:
        head_w = np.zeros((num_classes, c_in), dtype=dtype)
    else:
        head_w = _uniform_fan_in(rng, (num_classes, c_in), c_in, dtype, gain=head_gain)
    params["head.weight"] = Tensor(head_w, requires_grad=True)
    params["head.bias"] = Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True)
    return Network(layers, params, num_classes)


def save_checkpoint(net: Network, path):
    """Binary checkpoint: magic, version u16, manifest length u32 LE, manifest JSON, raw f32 data."""
    manifest = {
        "layers": net.layers,
        "head_class_count": net.head_class_count,
        "params": [{"name": n, "shape": list(net.parameters[n].shape)} for n in net.param_names()],
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(mbytes)))
        f.write(mbytes)
        for name in net.param_names():
            f.write(np.ascontiguousarray(net.parameters[name].data, dtype="<f4").tobytes())


def load_checkpoint(path) -> Network:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (version,) = struct.unpack("<H", f.read(2))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<I", f.read(4))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        params = {}
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError(f"checkpoint truncated at parameter {entry['name']}")
            params[entry["name"]] = Tensor(
                np.frombuffer(raw, dtype="<f4").reshape(shape).copy(), requires_grad=True)
    return Network(manifest["layers"], params, manifest["head_class_count"])
