"""Bounded-support smoothing kernels.

Both kernels integrate to one, are symmetric and vanish outside
``[-support_radius, support_radius]``; the finite radius is what lets
:func:`pairdiff.core.build_pairs` skip pairs far apart in ``W``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KERNEL_FAMILIES = ("box", "epanechnikov")


@dataclass(frozen=True)
class Kernel:
    family: str = "box"

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; "
                             f"expected one of {KERNEL_FAMILIES}")

    @property
    def support_radius(self) -> float:
        return 0.5 if self.family == "box" else 1.0

    def __call__(self, w):
        return eval_kernel(self, w)


def eval_kernel(kernel: Kernel, w):
    """Evaluate ``kernel`` at ``w`` (scalar or array)."""
    w = np.asarray(w, dtype=float)
    a = np.abs(w)
    if kernel.family == "box":
        out = np.where(a <= 0.5, 1.0, 0.0)
    else:
        out = np.where(a <= 1.0, 0.75 * (1.0 - w * w), 0.0)
    return out if out.ndim else float(out)


def get_kernel(kernel: str | Kernel | None) -> Kernel:
    if kernel is None:
        return Kernel("box")
    if isinstance(kernel, Kernel):
        return kernel
    return Kernel(str(kernel).lower())
