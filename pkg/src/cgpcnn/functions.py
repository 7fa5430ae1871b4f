"""Node-function vocabulary and the feature-map shape algebra.

Shapes are ``(rows, cols, channels)``. Every rule is total: a bad input
yields :data:`INVALID` rather than raising.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from cgpcnn.errors import ArityMismatch, UnknownFunctionSet

DEFAULT_CHANNELS = (32, 64, 128)
DEFAULT_KERNELS = (3, 5)


class FunctionKind(str, enum.Enum):
    CONV = "ConvBlock"
    RES = "ResBlock"
    MAX_POOL = "MaxPool"
    AVG_POOL = "AvgPool"
    SUM = "Sum"
    CONCAT = "Concat"


@dataclass(frozen=True)
class TensorShape:
    rows: int
    cols: int
    channels: int

    @property
    def valid(self) -> bool:
        return self.rows >= 1 and self.cols >= 1 and self.channels >= 1

    @property
    def size(self) -> int:
        return self.rows * self.cols * self.channels

    def __iter__(self):
        return iter((self.rows, self.cols, self.channels))

    def __str__(self):
        return f"{self.rows}x{self.cols}x{self.channels}"


# Distinguished value for any shape with a zero (or negative) dimension.
INVALID = TensorShape(0, 0, 0)


def make_shape(rows, cols, channels) -> TensorShape:
    shape = TensorShape(int(rows), int(cols), int(channels))
    return shape if shape.valid else INVALID


@dataclass(frozen=True)
class FunctionSpec:
    kind: FunctionKind
    out_channels: int | None = None
    kernel: int | None = None

    @property
    def arity(self) -> int:
        return 2 if self.kind in (FunctionKind.SUM, FunctionKind.CONCAT) else 1

    @property
    def is_conv(self) -> bool:
        return self.kind in (FunctionKind.CONV, FunctionKind.RES)

    @property
    def symbol(self) -> str:
        if self.kind is FunctionKind.CONV:
            return f"CB({self.out_channels},{self.kernel}×{self.kernel})"
        if self.kind is FunctionKind.RES:
            return f"RB({self.out_channels},{self.kernel}×{self.kernel})"
        return {
            FunctionKind.MAX_POOL: "MP",
            FunctionKind.AVG_POOL: "AP",
            FunctionKind.SUM: "Sum",
            FunctionKind.CONCAT: "Concat",
        }[self.kind]

    def __str__(self):
        return self.symbol


def catalog(function_set_id: str, channels=DEFAULT_CHANNELS, kernels=DEFAULT_KERNELS) -> list[FunctionSpec]:
    """Ordered function list for ``"ConvSet"`` or ``"ResSet"``.

    Convolutional entries come first, sorted by (channels, kernel), followed
    by MP, AP, Sum and Concat. ``channels``/``kernels`` override the default
    variants, which the desk-scale profile uses to shrink networks.
    """
    if function_set_id == "ConvSet":
        kind = FunctionKind.CONV
    elif function_set_id == "ResSet":
        kind = FunctionKind.RES
    else:
        raise UnknownFunctionSet(f"unknown function set {function_set_id!r}")
    convs = [FunctionSpec(kind, c, k) for c in sorted(channels) for k in sorted(kernels)]
    fixed = [
        FunctionSpec(FunctionKind.MAX_POOL),
        FunctionSpec(FunctionKind.AVG_POOL),
        FunctionSpec(FunctionKind.SUM),
        FunctionSpec(FunctionKind.CONCAT),
    ]
    return convs + fixed


def output_shape(f: FunctionSpec, in1: TensorShape, in2: TensorShape | None = None) -> TensorShape:
    if (in2 is None) != (f.arity == 1):
        raise ArityMismatch(f"{f.symbol} takes {f.arity} input(s)")
    if not in1.valid or (in2 is not None and not in2.valid):
        return INVALID
    m, n, c = in1
    if f.is_conv:
        return make_shape(m, n, f.out_channels)
    if f.kind in (FunctionKind.MAX_POOL, FunctionKind.AVG_POOL):
        return make_shape(m // 2, n // 2, c)
    m2, n2, c2 = in2
    if f.kind is FunctionKind.CONCAT:
        return make_shape(min(m, m2), min(n, n2), c + c2)
    return make_shape(min(m, m2), min(n, n2), max(c, c2))


def param_count(f: FunctionSpec, in_shape: TensorShape) -> int:
    """Learnable parameters: conv kernel and bias plus BN scale and shift."""
    if not f.is_conv:
        return 0
    k, c_out = f.kernel, f.out_channels
    return k * k * in_shape.channels * c_out + c_out + 2 * c_out


def downsample_plan(size: tuple[int, int], target: tuple[int, int]) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Max-pooling steps ``(window, stride)`` taking ``(rows, cols)`` to ``target``.

    Repeated 2x2/stride-2 pooling while both extents are at least twice the
    target, then one final pooling whose stride and window land exactly on
    the target when the extents are not related by a power of two.
    """
    (m, n), (tm, tn) = size, target
    steps = []
    while m >= 2 * tm and n >= 2 * tn:
        steps.append(((2, 2), (2, 2)))
        m //= 2
        n //= 2
    if (m, n) != (tm, tn):
        sm, sn = m // tm, n // tn
        steps.append(((m - (tm - 1) * sm, n - (tn - 1) * sn), (sm, sn)))
    return steps
