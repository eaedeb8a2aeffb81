"""Model structure: bit-packed binary weights, forward pass, serialization.

Hidden weights are stored as sign bits plus one positive scale per node, so
the effective weight between input i and node j is ``scales[j] * sign_ij``
with sign in {-1, +1}. Real-valued layers (used by the RVFL baselines in
real-weight mode) store dense float64 weights instead.

The on-disk format is little-endian throughout and ends with a CRC32 of all
preceding bytes; see ``serialize`` for the layout.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import ActivationKind
from .dataset import NormParams

MAGIC = b"SCM1"
FORMAT_VERSION = 1

_ACT_TAGS = {"sigmoid": 0, "brelu": 1, "tanh": 2, "sign": 3, "hardlim": 4}
_ACT_NAMES = {v: k for k, v in _ACT_TAGS.items()}

_WEIGHTS_BINARY = 0
_WEIGHTS_REAL = 1

_MECH_ZERO = 0
_MECH_LINEAR = 1
_MECH_EXTERNAL = 2

REAL_WEIGHT_BITS = 64


class ModelFormatError(RuntimeError):
    """Base class for malformed model files."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class BinaryWeightMatrix:
    """Bit-packed +/-1 signs with a positive scale per output node.

    Bits are packed row-major over (input, node) with little-endian bit
    order inside each byte; bit 1 decodes to +1, bit 0 to -1.
    """

    in_dim: int
    out_dim: int
    packed: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        packed = np.ascontiguousarray(self.packed, dtype=np.uint8)
        expected = (self.in_dim * self.out_dim + 7) // 8
        if packed.size != expected:
            raise ValueError(f"packed sign bytes: got {packed.size}, expected {expected}")
        scales = _freeze(self.scales)
        if scales.shape != (self.out_dim,):
            raise ValueError(f"scales must have length {self.out_dim}")
        if not np.all(scales > 0):
            raise ValueError("every scale must be > 0")
        packed.flags.writeable = False
        object.__setattr__(self, "packed", packed)
        object.__setattr__(self, "scales", scales)

    @classmethod
    def from_signs(cls, signs, scales) -> "BinaryWeightMatrix":
        signs = np.asarray(signs, dtype=np.float64)
        in_dim, out_dim = signs.shape
        if not np.all(np.abs(signs) == 1.0):
            raise ValueError("signs must be exactly +/-1")
        bits = (signs > 0).astype(np.uint8).reshape(-1)
        return cls(in_dim, out_dim, np.packbits(bits, bitorder="little"), scales)

    def signs(self) -> np.ndarray:
        bits = np.unpackbits(self.packed, count=self.in_dim * self.out_dim, bitorder="little")
        return bits.astype(np.float64).reshape(self.in_dim, self.out_dim) * 2.0 - 1.0

    def dense(self) -> np.ndarray:
        """Materialize effective weights: scales[j] * sign_ij."""
        return self.signs() * self.scales[None, :]

    @property
    def is_binary(self) -> bool:
        return True


@dataclass(frozen=True, eq=False)
class DenseWeightMatrix:
    """Dense float64 weights, used when a baseline runs in real-weight mode."""

    in_dim: int
    out_dim: int
    values: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        values = _freeze(self.values)
        scales = _freeze(self.scales)
        if values.shape != (self.in_dim, self.out_dim):
            raise ValueError(f"values must be {self.in_dim}x{self.out_dim}")
        if scales.shape != (self.out_dim,):
            raise ValueError(f"scales must have length {self.out_dim}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "scales", scales)

    def dense(self) -> np.ndarray:
        return self.values

    @property
    def is_binary(self) -> bool:
        return False


@dataclass(frozen=True, eq=False)
class Layer:
    """One hidden layer: weights, lambda-scaled biases, bounded activation."""

    weights: BinaryWeightMatrix | DenseWeightMatrix
    biases: np.ndarray
    activation: ActivationKind

    def __post_init__(self):
        biases = _freeze(self.biases)
        if biases.shape != (self.weights.out_dim,):
            raise ValueError(f"biases must have length {self.weights.out_dim}")
        if not np.isfinite(biases).all():
            raise ValueError("biases must be finite")
        object.__setattr__(self, "biases", biases)

    @property
    def in_dim(self) -> int:
        return self.weights.in_dim

    @property
    def out_dim(self) -> int:
        return self.weights.out_dim

    def apply(self, h_prev: np.ndarray) -> np.ndarray:
        return self.activation.apply(h_prev @ self.weights.dense() + self.biases)


@dataclass(frozen=True, eq=False)
class LinearMechanism:
    """Linear model in the normalized input space: X @ p + u."""

    p: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        p = _freeze(np.atleast_2d(self.p))
        u = _freeze(np.atleast_1d(self.u))
        if p.shape[1] != u.shape[0]:
            raise ValueError(f"p is {p.shape}, u has length {u.shape[0]}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "u", u)

    @property
    def selected(self) -> np.ndarray:
        """Mask of input variables with a non-zero linear weight."""
        return np.any(self.p != 0.0, axis=1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return x @ self.p + self.u


_MECHANISM_REGISTRY: dict[str, object] = {}


def register_mechanism(name: str, predictor) -> None:
    """Register a plug-in mechanism predictor under a stable name.

    The predictor maps raw (pre-normalization) inputs of shape (N, d) to raw
    target predictions of shape (N, m).
    """
    _MECHANISM_REGISTRY[name] = predictor


def resolve_mechanism(name: str):
    return _MECHANISM_REGISTRY.get(name)


@dataclass(frozen=True, eq=False)
class ExternalMechanism:
    """Named reference to a plug-in predictor over raw inputs.

    Serialized models store only the name; the predictor is looked up in the
    registry when the model is loaded or first evaluated.
    """

    name: str
    predictor: object = None

    def resolve(self):
        fn = self.predictor or resolve_mechanism(self.name)
        if fn is None:
            raise RuntimeError(
                f"external mechanism {self.name!r} is not registered; "
                "call register_mechanism() before evaluating this model"
            )
        return fn


Mechanism = LinearMechanism | ExternalMechanism | None


@dataclass(frozen=True, eq=False)
class ScmModel:
    """Deployable model: mechanism + hidden layer stack + global readout."""

    mechanism: Mechanism
    layers: tuple[Layer, ...]
    readout: np.ndarray
    norm: NormParams | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(self.layers)
        readout = _freeze(np.atleast_2d(self.readout))
        total = sum(l.out_dim for l in layers)
        if readout.shape[1] != total:
            raise ValueError(
                f"readout has {readout.shape[1]} columns, expected {total} hidden nodes"
            )
        prev = None
        for k, layer in enumerate(layers):
            if prev is not None and layer.in_dim != prev:
                raise ValueError(f"layer {k} expects {layer.in_dim} inputs, got {prev}")
            prev = layer.out_dim
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "readout", readout)

    @property
    def n_outputs(self) -> int:
        return self.readout.shape[0]

    @property
    def input_dim(self) -> int:
        if self.layers:
            return self.layers[0].in_dim
        if isinstance(self.mechanism, LinearMechanism):
            return self.mechanism.p.shape[0]
        if self.norm is not None:
            return self.norm.in_min.shape[0]
        raise ValueError("model has no layers and no mechanism; input dim unknown")

    @property
    def layer_widths(self) -> tuple[int, ...]:
        return tuple(l.out_dim for l in self.layers)


def mechanism_output(
    mechanism: Mechanism, x: np.ndarray, norm: NormParams | None, n_outputs: int = 1
) -> np.ndarray:
    """Mechanism prediction in the normalized target space.

    External plug-ins consume raw inputs and emit raw targets, so the input
    is denormalized first and the prediction scaled back.
    """
    if mechanism is None:
        return np.zeros((x.shape[0], n_outputs))
    if isinstance(mechanism, LinearMechanism):
        return mechanism.predict(x)
    fn = mechanism.resolve()
    raw_x = norm.unscale_inputs(x) if norm is not None else x
    raw_pred = np.atleast_2d(np.asarray(fn(raw_x), dtype=np.float64))
    if raw_pred.shape[0] != x.shape[0]:
        raw_pred = raw_pred.T
    return norm.scale_targets(raw_pred) if norm is not None else raw_pred


def hidden_outputs(model: ScmModel, x: np.ndarray) -> list[np.ndarray]:
    """Every layer's activation matrix H_k for input x (normalized space)."""
    x = np.asarray(x, dtype=np.float64)
    if model.layers and x.shape[1] != model.layers[0].in_dim:
        raise ValueError(f"input has {x.shape[1]} columns, model expects {model.layers[0].in_dim}")
    outs = []
    h = x
    for layer in model.layers:
        h = layer.apply(h)
        outs.append(h)
    return outs


def forward(model: ScmModel, x: np.ndarray) -> np.ndarray:
    """Model output: mechanism + concatenated hidden outputs times readout.

    Hidden contributions are accumulated layer-major with node index
    ascending, which the concatenated matmul fixes by construction.
    """
    x = np.asarray(x, dtype=np.float64)
    m = model.n_outputs
    out = mechanism_output(model.mechanism, x, model.norm, m)
    if out.shape != (x.shape[0], m):
        raise ValueError(f"mechanism produced shape {out.shape}, expected {(x.shape[0], m)}")
    hs = hidden_outputs(model, x)
    if hs:
        out = out + np.hstack(hs) @ model.readout.T
    return out


def stochastic_part(model: ScmModel, x: np.ndarray) -> np.ndarray:
    """Hidden-layer contribution only (mechanism term excluded)."""
    hs = hidden_outputs(model, np.asarray(x, dtype=np.float64))
    if not hs:
        return np.zeros((np.asarray(x).shape[0], model.n_outputs))
    return np.hstack(hs) @ model.readout.T


@dataclass(frozen=True)
class StorageReport:
    weights: int
    sign_bits: int
    upsilon_bits: int
    real64_bits: int
    reduction_pct: float


def storage_report_from_dims(input_dim: int, widths) -> StorageReport:
    """Bit accounting for a topology: sign bit per weight plus a 64-bit scale
    per node, against 64-bit real weights. Biases and readout are excluded."""
    widths = list(widths)
    if not widths:
        raise ValueError("at least one layer is required")
    dims = [input_dim] + widths
    weights = sum(a * b for a, b in zip(dims[:-1], dims[1:]))
    sign_bits = weights
    upsilon_bits = REAL_WEIGHT_BITS * sum(widths)
    real64_bits = REAL_WEIGHT_BITS * weights
    reduction = 100.0 * (1.0 - (sign_bits + upsilon_bits) / real64_bits)
    return StorageReport(weights, sign_bits, upsilon_bits, real64_bits, reduction)


def storage_report(model: ScmModel) -> StorageReport:
    if not model.layers:
        raise ValueError("storage report requires at least one layer")
    return storage_report_from_dims(model.layers[0].in_dim, model.layer_widths)


# ---------------------------------------------------------------------------
# Serialization.
#
# Layout (all little-endian):
#   magic "SCM1" | version u16
#   d u32 | m u32 | layer_count u32
#   per layer: in_dim u32, out_dim u32, activation tag u8, weight kind u8,
#              activation param f64
#   mechanism: tag u8 (0 zero, 1 linear, 2 external)
#              linear -> p (d*m f64) then u (m f64)
#              external -> name length u32 + utf-8 bytes
#   per layer: scales (out f64), biases (out f64),
#              packed sign bytes (binary) or dense weights (real, f64)
#   readout beta (m * total f64)
#   norm flag u8; when 1: in_min/in_max (d f64 each), t_min/t_max (m f64 each)
#   meta: u32 length + canonical-JSON utf-8
#   crc32 u32 over all preceding bytes
# ---------------------------------------------------------------------------


def _f64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def to_bytes(model: ScmModel) -> bytes:
    d = model.input_dim
    m = model.n_outputs
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION)]
    parts.append(struct.pack("<III", d, m, len(model.layers)))
    for layer in model.layers:
        kind = _WEIGHTS_BINARY if layer.weights.is_binary else _WEIGHTS_REAL
        parts.append(
            struct.pack(
                "<IIBBd",
                layer.in_dim,
                layer.out_dim,
                _ACT_TAGS[layer.activation.name],
                kind,
                layer.activation.bound,
            )
        )
    mech = model.mechanism
    if mech is None:
        parts.append(struct.pack("<B", _MECH_ZERO))
    elif isinstance(mech, LinearMechanism):
        parts.append(struct.pack("<B", _MECH_LINEAR))
        parts.append(_f64_bytes(mech.p))
        parts.append(_f64_bytes(mech.u))
    else:
        name = mech.name.encode("utf-8")
        parts.append(struct.pack("<BI", _MECH_EXTERNAL, len(name)))
        parts.append(name)
    for layer in model.layers:
        parts.append(_f64_bytes(layer.weights.scales))
        parts.append(_f64_bytes(layer.biases))
        if layer.weights.is_binary:
            parts.append(layer.weights.packed.tobytes())
        else:
            parts.append(_f64_bytes(layer.weights.values))
    parts.append(_f64_bytes(model.readout))
    if model.norm is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        for arr in (model.norm.in_min, model.norm.in_max, model.norm.t_min, model.norm.t_max):
            parts.append(_f64_bytes(arr))
    meta_json = json.dumps(model.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_json)))
    parts.append(meta_json)
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"file ends at byte {len(self.buf)}, needed {self.pos + n}"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f64(self, count: int, shape=None) -> np.ndarray:
        arr = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)
        return arr.reshape(shape) if shape is not None else arr


def from_bytes(data: bytes) -> ScmModel:
    if len(data) < len(MAGIC) + 2 + 4:
        raise TruncatedFileError(f"file is only {len(data)} bytes")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<H", data[len(MAGIC):len(MAGIC) + 2])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}")
    payload, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if actual != stored:
        raise ChecksumError(f"crc mismatch: stored {stored:#010x}, computed {actual:#010x}")

    r = _Reader(payload)
    r.take(len(MAGIC) + 2)
    d, m, n_layers = r.unpack("<III")
    headers = [r.unpack("<IIBBd") for _ in range(n_layers)]

    (mech_tag,) = r.unpack("<B")
    if mech_tag == _MECH_ZERO:
        mechanism: Mechanism = None
    elif mech_tag == _MECH_LINEAR:
        p = r.f64(d * m, (d, m))
        u = r.f64(m)
        mechanism = LinearMechanism(p, u)
    elif mech_tag == _MECH_EXTERNAL:
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        mechanism = ExternalMechanism(name, resolve_mechanism(name))
    else:
        raise ModelFormatError(f"unknown mechanism tag {mech_tag}")

    layers = []
    for in_dim, out_dim, act_tag, kind, act_param in headers:
        if act_tag not in _ACT_NAMES:
            raise ModelFormatError(f"unknown activation tag {act_tag}")
        act = ActivationKind(_ACT_NAMES[act_tag], act_param if act_param > 0 else 1.0)
        scales = r.f64(out_dim)
        biases = r.f64(out_dim)
        if kind == _WEIGHTS_BINARY:
            packed = np.frombuffer(r.take((in_dim * out_dim + 7) // 8), dtype=np.uint8)
            weights: BinaryWeightMatrix | DenseWeightMatrix = BinaryWeightMatrix(
                in_dim, out_dim, packed.copy(), scales
            )
        elif kind == _WEIGHTS_REAL:
            weights = DenseWeightMatrix(in_dim, out_dim, r.f64(in_dim * out_dim, (in_dim, out_dim)), scales)
        else:
            raise ModelFormatError(f"unknown weight kind {kind}")
        layers.append(Layer(weights, biases, act))

    total = sum(h[1] for h in headers)
    readout = r.f64(m * total, (m, total)) if total else np.zeros((m, 0))
    (norm_flag,) = r.unpack("<B")
    norm = None
    if norm_flag == 1:
        norm = NormParams(r.f64(d), r.f64(d), r.f64(m), r.f64(m))
    elif norm_flag != 0:
        raise ModelFormatError(f"unknown norm flag {norm_flag}")
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8")) if meta_len else {}
    if r.pos != len(payload):
        raise ModelFormatError(f"{len(payload) - r.pos} trailing bytes after model data")
    return ScmModel(mechanism, tuple(layers), readout, norm, meta)


def serialize(model: ScmModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def deserialize(path) -> ScmModel:
    return from_bytes(Path(path).read_bytes())


def models_equal(a: ScmModel, b: ScmModel) -> bool:
    """Field-by-field equality including packed sign bits (via byte encoding)."""
    return to_bytes(a) == to_bytes(b)
