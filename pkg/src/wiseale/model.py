"""Fully-connected encoder/decoder pair with a portable checkpoint format.

Parameter layout (the order used for initialisation and checkpoints)::

    enc.{l}.W, enc.{l}.b   for each encoder hidden layer l = 0..
    enc.mu.W,  enc.mu.b    mean head
    enc.lv.W,  enc.lv.b    log-variance head
    dec.{l}.W, dec.{l}.b   for each decoder hidden layer
    dec.out.W, dec.out.b   output layer

Weights are stored ``(out, in)``, biases ``(out,)``.

Checkpoint file layout::

    8 bytes   b"WISEALE1"
    4 bytes   header length H, little-endian uint32
    H bytes   UTF-8 JSON: {"arch": {...}, "layout": [[name, [shape...]], ...]}
    rest      every parameter in layout order, little-endian float64, row-major
"""

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from wiseale import diff_core as dc
from wiseale.latent_gaussian import gaussian_batch

MAGIC = b"WISEALE1"
BERNOULLI = "bernoulli"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class Architecture:
    d_x: int
    d_z: int
    enc_hidden: tuple = (128, 64)
    dec_hidden: tuple = None
    likelihood: str = GAUSSIAN
    sigma_dec: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "enc_hidden", tuple(int(h) for h in self.enc_hidden))
        dec = tuple(reversed(self.enc_hidden)) if self.dec_hidden is None else self.dec_hidden
        object.__setattr__(self, "dec_hidden", tuple(int(h) for h in dec))
        if self.likelihood not in (BERNOULLI, GAUSSIAN):
            raise dc.UsageError(f"unknown likelihood {self.likelihood!r}")
        if min((self.d_x, self.d_z) + self.enc_hidden + self.dec_hidden) < 1:
            raise dc.UsageError("layer widths must be positive")
        if self.sigma_dec <= 0:
            raise dc.UsageError("sigma_dec must be positive")

    def layout(self):
        shapes = []
        widths = (self.d_x,) + self.enc_hidden
        for l, (i, o) in enumerate(zip(widths[:-1], widths[1:])):
            shapes += [(f"enc.{l}.W", (o, i)), (f"enc.{l}.b", (o,))]
        top = widths[-1]
        for head in ("mu", "lv"):
            shapes += [(f"enc.{head}.W", (self.d_z, top)), (f"enc.{head}.b", (self.d_z,))]
        widths = (self.d_z,) + self.dec_hidden
        for l, (i, o) in enumerate(zip(widths[:-1], widths[1:])):
            shapes += [(f"dec.{l}.W", (o, i)), (f"dec.{l}.b", (o,))]
        shapes += [("dec.out.W", (self.d_x, widths[-1])), ("dec.out.b", (self.d_x,))]
        return shapes

    def to_dict(self):
        d = asdict(self)
        d["enc_hidden"] = list(self.enc_hidden)
        d["dec_hidden"] = list(self.dec_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def sine_architecture(d_z=8):
    return Architecture(d_x=256, d_z=d_z, enc_hidden=(128, 64), likelihood=GAUSSIAN, sigma_dec=0.1)


def mnist_architecture(d_z=2):
    return Architecture(d_x=784, d_z=d_z, enc_hidden=(256, 64), likelihood=BERNOULLI)


class ModelParams(OrderedDict):
    """Name -> array mapping in layout order, tagged with its architecture."""

    def __init__(self, arch, arrays=None):
        super().__init__()
        self.arch = arch
        if arrays is not None:
            for name, shape in arch.layout():
                arr = np.asarray(arrays[name], dtype=np.float64)
                if arr.shape != shape:
                    raise dc.ShapeError(name, arr.shape, shape)
                self[name] = arr

    def copy(self):
        return ModelParams(self.arch, {k: v.copy() for k, v in self.items()})

    def bind(self, graph, trainable=True):
        make = graph.parameter if trainable else (lambda v, name: graph.constant(v))
        return Bound(self.arch, OrderedDict((k, make(v, k)) for k, v in self.items()))

    def n_values(self):
        return int(np.sum([v.size for v in self.values()]))


@dataclass
class Bound:
    """Parameters bound as nodes in one graph."""

    arch: Architecture
    nodes: OrderedDict

    def __getitem__(self, name):
        return self.nodes[name]


def _as_bound(params, graph=None):
    if isinstance(params, Bound):
        return params
    if isinstance(params, ModelParams):
        return params.bind(graph or dc.Graph(), trainable=False)
    raise dc.UsageError(f"expected ModelParams or Bound, got {type(params).__name__}")


def init_params(arch, seed):
    """Glorot-uniform weights, zero biases; log-variance head weights scaled by 0.01."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in arch.layout():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape)
            continue
        fan_out, fan_in = shape
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=shape)
        if name == "enc.lv.W":
            w *= 0.01
        arrays[name] = w
    return ModelParams(arch, arrays)


def zero_params(arch):
    return ModelParams(arch, {name: np.zeros(shape) for name, shape in arch.layout()})


def _dense(bound, prefix, h):
    return dc.add(dc.matmul(h, dc.transpose(bound[prefix + ".W"])), bound[prefix + ".b"])


def encode(params, x, graph=None):
    """Map ``(M, d_x)`` inputs to a :class:`GaussianBatch` of posteriors."""
    if graph is None and isinstance(x, dc.Node):
        graph = x.graph
    b = _as_bound(params, graph)
    g = next(iter(b.nodes.values())).graph
    x = dc.as_node(x, g)
    if x.value.ndim != 2 or x.shape[1] != b.arch.d_x:
        raise dc.UsageError(f"encode: input width {x.shape[-1]} != d_x {b.arch.d_x}")
    h = x
    for l in range(len(b.arch.enc_hidden)):
        h = dc.tanh(_dense(b, f"enc.{l}", h))
    return gaussian_batch(_dense(b, "enc.mu", h), _dense(b, "enc.lv", h))


def decode(params, z, graph=None):
    """Map ``(M, d_z)`` latents to likelihood parameters: sigmoid means or Gaussian means."""
    if graph is None and isinstance(z, dc.Node):
        graph = z.graph
    b = _as_bound(params, graph)
    g = next(iter(b.nodes.values())).graph
    z = dc.as_node(z, g)
    if z.value.ndim != 2 or z.shape[1] != b.arch.d_z:
        raise dc.UsageError(f"decode: latent width {z.shape[-1]} != d_z {b.arch.d_z}")
    h = z
    for l in range(len(b.arch.dec_hidden)):
        h = dc.tanh(_dense(b, f"dec.{l}", h))
    out = _dense(b, "dec.out", h)
    return dc.sigmoid(out) if b.arch.likelihood == BERNOULLI else out


def save_checkpoint(params, path):
    header = json.dumps({"arch": params.arch.to_dict(),
                         "layout": [[n, list(s)] for n, s in params.arch.layout()]},
                        sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n, _ in params.arch.layout())
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", len(header)) + header + body)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}")
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    arch = Architecture.from_dict(header["arch"])
    offset = 12 + hlen
    arrays = {}
    for name, shape in arch.layout():
        n = int(np.prod(shape))
        chunk = blob[offset:offset + 8 * n]
        if len(chunk) != 8 * n:
            raise CheckpointError(f"{path}: truncated at byte {offset} reading {name}")
        arrays[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * n
    return ModelParams(arch, arrays)
