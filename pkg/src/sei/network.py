"""A small residual CNN with periodic padding, standing in for a large SR backbone."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ndgrad as nd
from .transforms import bicubic_upsample


@dataclass(frozen=True)
class NetworkConfig:
    channels: int = 32
    depth: int = 6
    kernel_size: int = 3
    residual: bool = True
    r: int = 1
    in_channels: int = 1
    zero_last: bool = False

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.r < 1:
            raise ValueError("r must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan-in channels, fan-out channels) per conv layer."""
        c_in, c_out = self.in_channels, self.in_channels * self.r * self.r
        if self.depth == 1:
            return [(c_in, c_out)]
        return [(c_in, self.channels)] + [(self.channels, self.channels)] * (self.depth - 2) + [(self.channels, c_out)]

    def parameter_count(self) -> int:
        k2 = self.kernel_size**2
        return sum(k2 * a * b + b for a, b in self.layer_shapes())


def build_network(cfg: NetworkConfig, rng: np.random.Generator, dtype=None) -> dict[str, np.ndarray]:
    """Uniform fan-in initialisation ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
    dtype = dtype or nd.get_default_dtype()
    params: dict[str, np.ndarray] = {}
    k = cfg.kernel_size
    shapes = cfg.layer_shapes()
    for i, (a, b) in enumerate(shapes):
        bound = 1.0 / np.sqrt(k * k * a)
        w = rng.uniform(-bound, bound, size=(k, k, a, b))
        if cfg.zero_last and i == len(shapes) - 1:
            w = np.zeros_like(w)
        params[f"conv{i}.weight"] = w.astype(dtype)
        params[f"conv{i}.bias"] = np.zeros(b, dtype=dtype)
    return params


class Network:
    """Callable reconstructor ``y -> x`` with tracked parameters."""

    def __init__(self, cfg: NetworkConfig, params: dict[str, np.ndarray]):
        expected = {f"conv{i}.{kind}" for i in range(cfg.depth) for kind in ("weight", "bias")}
        if set(params) != expected:
            raise ValueError(f"parameter names {sorted(params)} do not match config (expected {sorted(expected)})")
        self.cfg = cfg
        self.params = {name: nd.Tensor(np.array(v), requires_grad=True) for name, v in params.items()}

    @property
    def r(self) -> int:
        return self.cfg.r

    def names(self) -> list[str]:
        return list(self.params)

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            t.data = np.asarray(state[name], dtype=t.dtype)

    def __call__(self, y) -> nd.Tensor:
        return reconstruct(self, y)


def reconstruct(net: Network, y) -> nd.Tensor:
    y = nd.as_tensor(y, dtype=net.params["conv0.weight"].dtype)
    k = net.cfg.kernel_size
    if y.shape[-3] < k or y.shape[-2] < k:
        raise ValueError(f"input extents {y.shape[-3:-1]} smaller than kernel size {k}")
    h = y
    depth = net.cfg.depth
    for i in range(depth):
        h = nd.conv_layer(h, net.params[f"conv{i}.weight"], net.params[f"conv{i}.bias"])
        if i < depth - 1:
            h = nd.relu(h)
    h = nd.pixel_shuffle(h, net.cfg.r)
    if net.cfg.residual:
        h = nd.add(bicubic_upsample(y, net.cfg.r), h)
    return h
