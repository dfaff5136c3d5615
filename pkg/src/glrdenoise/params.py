"""Model parameters for the three sub-networks, the Adam optimizer, and the
binary checkpoint container.

Parameter names are flat strings ("f/enc0/kernel", "mu/fc1/bias", ...). One
ModelParams instance is shared by every cascade stage.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .autodiff import Tensor


class OptimizerUsageError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureConfig:
    """Widths and shapes of the three sub-networks.

    Defaults are the desk-scale configuration; gradient checks shrink them.
    ``patch`` fixes the input size of the per-patch weighting network (its
    fully-connected layer shapes depend on it).
    """

    exemplars: int = 3
    f_widths: Tuple[int, int, int] = (16, 32, 64)
    yhat_width: int = 16
    mu_widths: Tuple[int, int] = (8, 16)
    mu_fc_hidden: int = 32
    patch: int = 26

    @property
    def mu_flat_size(self) -> int:
        side = (self.patch // 2) // 2  # two 2x2 poolings, floor division
        return self.mu_widths[1] * side * side


class ModelParams:
    """Named, fixed-shape parameter tensors shared across all cascades."""

    def __init__(self, arch: ArchitectureConfig, tensors: Dict[str, Tensor]):
        self.arch = arch
        self.tensors = tensors
        self.receptive_field = _exemplar_receptive_field()

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


def _exemplar_receptive_field() -> int:
    """Receptive field of the exemplar network, from its layer geometry."""
    r, j = 1.0, 1.0
    for kind, k, s in _F_LAYER_GEOMETRY:
        if kind == "conv":
            r += (k - 1) * j
            j *= s
        else:  # transposed, stride 2
            j /= 2
            r += (k - 1) * j
    return int(np.ceil(r))


# (kind, kernel, stride) along the deepest path of the exemplar network
_F_LAYER_GEOMETRY = [
    ("conv", 3, 1),   # enc0
    ("conv", 3, 2),   # enc1
    ("conv", 3, 2),   # enc2
    ("tconv", 2, 2),  # dec1
    ("conv", 3, 1),   # merge1
    ("tconv", 2, 2),  # dec0
    ("conv", 3, 1),   # merge0
    ("conv", 3, 1),   # out
]


def _uniform_init(rng: np.random.Generator, shape: Tuple[int, ...],
                  fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def build_params(arch: ArchitectureConfig, seed: int = 0) -> ModelParams:
    """Create freshly initialized parameters for all three sub-networks."""
    rng = np.random.default_rng(seed)
    t: Dict[str, Tensor] = {}

    def conv(name: str, out_ch: int, in_ch: int, k: int = 3) -> None:
        t[f"{name}/kernel"] = Tensor(
            _uniform_init(rng, (out_ch, in_ch, k, k), in_ch * k * k, out_ch * k * k),
            name=f"{name}/kernel",
        )
        t[f"{name}/bias"] = Tensor(np.full(out_ch, 0.01), name=f"{name}/bias")

    def tconv(name: str, in_ch: int, out_ch: int) -> None:
        t[f"{name}/kernel"] = Tensor(
            _uniform_init(rng, (in_ch, out_ch, 2, 2), in_ch * 4, out_ch * 4),
            name=f"{name}/kernel",
        )
        t[f"{name}/bias"] = Tensor(np.full(out_ch, 0.01), name=f"{name}/bias")

    def fc(name: str, out_n: int, in_n: int) -> None:
        t[f"{name}/weights"] = Tensor(
            _uniform_init(rng, (out_n, in_n), in_n, out_n), name=f"{name}/weights"
        )
        t[f"{name}/bias"] = Tensor(np.full(out_n, 0.01), name=f"{name}/bias")

    w0, w1, w2 = arch.f_widths
    conv("f/enc0", w0, 1)
    conv("f/enc1", w1, w0)
    conv("f/enc2", w2, w1)
    tconv("f/dec1", w2, w1)
    conv("f/merge1", w1, 2 * w1)
    tconv("f/dec0", w1, w0)
    conv("f/merge0", w0, 2 * w0)
    conv("f/out", arch.exemplars, w0)

    yw = arch.yhat_width
    conv("y/conv0", yw, 1)
    conv("y/conv1", yw, yw)
    conv("y/conv2", yw, yw)
    conv("y/out", 1, yw)

    m0, m1 = arch.mu_widths
    conv("mu/conv0", m0, 1)
    conv("mu/conv1", m1, m0)
    conv("mu/conv2", m1, m1)
    conv("mu/conv3", m1, m1)
    fc("mu/fc0", arch.mu_fc_hidden, arch.mu_flat_size)
    fc("mu/fc1", 1, arch.mu_fc_hidden)

    return ModelParams(arch, t)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment buffers plus the step counter and hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(params: ModelParams, state: AdamState) -> None:
    """One Adam step with bias correction, in place on params and state."""
    for name, tensor in params.items():
        if tensor.grad is None:
            raise OptimizerUsageError(f"parameter {name!r} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, tensor in params.items():
        g = tensor.grad
        m = state.m.setdefault(name, np.zeros_like(tensor.data))
        v = state.v.setdefault(name, np.zeros_like(tensor.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        tensor.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# Checkpoint container: magic "DGLR", u32 version, u32 record count, then
# per record: u32 name length, UTF-8 name, u32 rank, rank x u64 extents,
# raw float64 payload. Everything little-endian. Optimizer state lives under
# the reserved "opt/" prefix; architecture metadata under "meta/".

_MAGIC = b"DGLR"
_VERSION = 1


def _write_record(f, name: str, array: np.ndarray) -> None:
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<I", array.ndim))
    for ext in array.shape:
        f.write(struct.pack("<Q", ext))
    f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read_record(f) -> Tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", f.read(4))
    name = f.read(name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", f.read(4))
    shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)
    return name, data.astype(np.float64)


def save_checkpoint(path, params: ModelParams,
                    adam: Optional[AdamState] = None) -> None:
    records: list[Tuple[str, np.ndarray]] = []
    a = params.arch
    records.append((
        "meta/arch",
        np.array([a.exemplars, *a.f_widths, a.yhat_width, *a.mu_widths,
                  a.mu_fc_hidden, a.patch], dtype=np.float64),
    ))
    for name, tensor in params.items():
        records.append((name, tensor.data))
    if adam is not None:
        records.append((
            "opt/meta",
            np.array([adam.step, adam.lr, adam.beta1, adam.beta2, adam.eps]),
        ))
        for name in params.tensors:
            if name in adam.m:
                records.append((f"opt/m/{name}", adam.m[name]))
                records.append((f"opt/v/{name}", adam.v[name]))
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<I", len(records)))
        for name, array in records:
            _write_record(f, name, array)


def load_checkpoint(path) -> Tuple[ModelParams, Optional[AdamState]]:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        records = dict(_read_record(f) for _ in range(count))

    if "meta/arch" not in records:
        raise CheckpointFormatError(f"{path}: missing architecture record")
    fields = [int(x) for x in records.pop("meta/arch")]
    arch = ArchitectureConfig(
        exemplars=fields[0], f_widths=tuple(fields[1:4]), yhat_width=fields[4],
        mu_widths=tuple(fields[5:7]), mu_fc_hidden=fields[7], patch=fields[8],
    )
    params = build_params(arch, seed=0)
    for name, tensor in params.items():
        if name not in records:
            raise CheckpointFormatError(f"{path}: missing parameter {name!r}")
        if records[name].shape != tensor.data.shape:
            raise CheckpointFormatError(
                f"{path}: parameter {name!r} has shape {records[name].shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = records[name].copy()

    adam: Optional[AdamState] = None
    if "opt/meta" in records:
        step, lr, b1, b2, eps = records["opt/meta"]
        adam = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=int(step))
        for name in params.tensors:
            if f"opt/m/{name}" in records:
                adam.m[name] = records[f"opt/m/{name}"].copy()
                adam.v[name] = records[f"opt/v/{name}"].copy()
    return params, adam
