"""Theoretical / effective receptive fields and the feature-point grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .core import FeaturePoint, Gaussian2D, LevelGrid, PointSet


@dataclass(frozen=True)
class ConvLayerSpec:
    kernel: int
    stride: int = 1

    def __post_init__(self):
        if int(self.kernel) != self.kernel or self.kernel < 1:
            raise ValueError(f"kernel must be a positive integer, got {self.kernel!r}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ValueError(f"stride must be a positive integer, got {self.stride!r}")


@dataclass(frozen=True)
class ConvStack:
    """Layers from the input image up to a pyramid level's output."""

    layers: tuple[ConvLayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("ConvStack needs at least one layer")

    @property
    def stride(self) -> int:
        return math.prod(layer.stride for layer in self.layers)

    @property
    def er(self) -> float:
        return erf_radius(trf(self.layers)[-1])


@dataclass(frozen=True)
class ExplicitRadius:
    er: float

    def __post_init__(self):
        if not self.er > 0:
            raise ValueError(f"explicit ERF radius must be > 0, got {self.er!r}")


ErfSource = Union[ConvStack, ExplicitRadius]


@dataclass(frozen=True)
class PyramidLevelSpec:
    stride: float
    erf_source: ErfSource

    def __post_init__(self):
        if not self.stride >= 1:
            raise ValueError(f"level stride must be >= 1, got {self.stride!r}")
        if isinstance(self.erf_source, ConvStack) and self.erf_source.stride != self.stride:
            raise ValueError(
                f"conv stack strides multiply to {self.erf_source.stride}, level stride is {self.stride}"
            )

    @property
    def er(self) -> float:
        return self.erf_source.er


@dataclass(frozen=True)
class PyramidSpec:
    """Image extent plus FPN levels ordered by increasing stride.

    ``offset`` places grid centers at ``(i + offset) * stride``.
    """

    image_w: float
    image_h: float
    levels: tuple[PyramidLevelSpec, ...] = field(default_factory=tuple)
    offset: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.levels:
            raise ValueError("PyramidSpec needs at least one level")
        if not (self.image_w > 0 and self.image_h > 0):
            raise ValueError("image extent must be positive")
        strides = [lvl.stride for lvl in self.levels]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError(f"level strides must strictly increase, got {strides}")
        if not 0 <= self.offset < 1:
            raise ValueError(f"grid offset must lie in [0, 1), got {self.offset!r}")


def trf(stack: Sequence[ConvLayerSpec]) -> list[int]:
    """Theoretical receptive field after each layer of ``stack``.

    Starts from a single input pixel; each layer widens the field by
    ``kernel - 1`` times the product of all strides below it.
    """
    if not stack:
        raise ValueError("trf() needs a non-empty layer stack")
    out = []
    field_size, jump = 1, 1
    for layer in stack:
        field_size += (layer.kernel - 1) * jump
        jump *= layer.stride
        out.append(field_size)
    return out


def erf_radius(trf_final: float) -> float:
    """ERF radius, taken as half the TRF."""
    return trf_final / 2.0


def erf_gaussian(p: FeaturePoint) -> Gaussian2D:
    return Gaussian2D(p.px, p.py, p.er * p.er, p.er * p.er)


def build_grid(spec: PyramidSpec) -> PointSet:
    """One feature point per grid cell on every level, row-major, levels in order."""
    levels, pxs, pys, ers, grids = [], [], [], [], []
    start = 0
    for li, lvl in enumerate(spec.levels):
        nx = int(spec.image_w // lvl.stride)
        ny = int(spec.image_h // lvl.stride)
        er = float(lvl.er)
        xs = (np.arange(nx) + spec.offset) * lvl.stride
        ys = (np.arange(ny) + spec.offset) * lvl.stride
        gx, gy = np.meshgrid(xs, ys)
        pxs.append(gx.ravel())
        pys.append(gy.ravel())
        levels.append(np.full(nx * ny, li, dtype=np.int64))
        ers.append(np.full(nx * ny, er))
        grids.append(LevelGrid(li, float(lvl.stride), spec.offset, nx, ny, start, er))
        start += nx * ny
    return PointSet(
        np.concatenate(levels),
        np.concatenate(pxs),
        np.concatenate(pys),
        np.concatenate(ers),
        grid=tuple(grids),
    )


def _bottleneck(n_blocks: int, first_stride: int) -> list[ConvLayerSpec]:
    # torchvision-style: the stride sits on the 3x3 conv of the first block
    layers = []
    for b in range(n_blocks):
        s = first_stride if b == 0 else 1
        layers += [ConvLayerSpec(1, 1), ConvLayerSpec(3, s), ConvLayerSpec(1, 1)]
    return layers


def resnet50_fpn_stacks() -> dict[int, ConvStack]:
    """Approximate conv stacks for a ResNet-50 + FPN pyramid, keyed by stride.

    Each level follows the backbone path up to its stage, then the FPN 3x3
    output conv. The top-down pathway is ignored and the stride-64 level is
    one extra stride-2 3x3 conv on top of the stride-32 output. These radii
    are illustrative, not the exact numbers of any trained detector.
    """
    stem = [ConvLayerSpec(7, 2), ConvLayerSpec(3, 2)]
    c2 = stem + _bottleneck(3, 1)
    c3 = c2 + _bottleneck(4, 2)
    c4 = c3 + _bottleneck(6, 2)
    c5 = c4 + _bottleneck(3, 2)
    out = ConvLayerSpec(3, 1)
    p5 = c5 + [out]
    return {
        4: ConvStack(tuple(c2 + [out])),
        8: ConvStack(tuple(c3 + [out])),
        16: ConvStack(tuple(c4 + [out])),
        32: ConvStack(tuple(p5)),
        64: ConvStack(tuple(p5 + [ConvLayerSpec(3, 2)])),
    }


def resnet50_fpn_pyramid(image_w: float = 800, image_h: float = 800, strides=(4, 8, 16, 32, 64)) -> PyramidSpec:
    stacks = resnet50_fpn_stacks()
    unknown = [s for s in strides if s not in stacks]
    if unknown:
        raise ValueError(f"no preset conv stack for strides {unknown}; available: {sorted(stacks)}")
    return PyramidSpec(image_w, image_h, tuple(PyramidLevelSpec(s, stacks[s]) for s in strides))
