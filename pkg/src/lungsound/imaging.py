"""Turn spectral matrices into fixed-size 3-channel images in [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import LogMelSpectrogram, MfccMatrix

GRAYSCALE = np.repeat(np.linspace(0.0, 1.0, 256)[:, None], 3, axis=1)
GRAYSCALE.setflags(write=False)


@dataclass(frozen=True, eq=False)
class ImageConfig:
    size: int = 256
    colormap: np.ndarray | None = None  # None: triplicate the normalized matrix

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("image size must be positive")
        if self.colormap is not None:
            _check_table(self.colormap)


def _check_table(table) -> np.ndarray:
    table = np.asarray(table, dtype=np.float64)
    if table.shape != (256, 3):
        raise ValueError(f"colormap must have 256 RGB rows, got shape {table.shape}")
    if not (np.all(table >= 0) and np.all(table <= 1)):
        raise ValueError("colormap entries must lie in [0, 1]")
    return table


def load_colormap(path) -> np.ndarray:
    """Read a 256-line ``r g b`` text table."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}: line {lineno}: expected 3 values")
        rows.append([float(p) for p in parts])
    table = _check_table(rows)
    table.setflags(write=False)
    return table


def save_colormap(path, table) -> None:
    table = _check_table(table)
    Path(path).write_text("".join(f"{float(r)!r} {float(g)!r} {float(b)!r}\n" for r, g, b in table), encoding="utf-8")


def normalize_minmax(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def _grid(n_in: int, n_out: int):
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(pos).astype(np.intp), max(n_in - 2, 0))
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, pos - i0


def resize_bilinear(m, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-D matrix.

    The four corner terms are summed in a transpose-symmetric order, so
    ``resize(m.T, n, n) == resize(m, n, n).T`` holds bit-for-bit.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be positive")
    y0, y1, fy = _grid(m.shape[0], out_h)
    x0, x1, fx = _grid(m.shape[1], out_w)
    fy, fx = fy[:, None], fx[None, :]
    a = m[y0][:, x0]
    b = m[y0][:, x1]
    c = m[y1][:, x0]
    d = m[y1][:, x1]
    w00 = (1.0 - fy) * (1.0 - fx)
    w01 = (1.0 - fy) * fx
    w10 = fy * (1.0 - fx)
    w11 = fy * fx
    return (w00 * a + w11 * d) + (w01 * b + w10 * c)


def apply_colormap(m, cmap=GRAYSCALE) -> np.ndarray:
    """Map values in [0, 1] through a 256-entry table with linear interpolation."""
    m = np.clip(np.asarray(m, dtype=np.float64), 0.0, 1.0)
    table = np.asarray(cmap, dtype=np.float64)
    pos = m * 255.0
    lo = np.minimum(np.floor(pos).astype(np.intp), 254)
    frac = (pos - lo)[..., None]
    return table[lo] * (1.0 - frac) + table[lo + 1] * frac


def to_feature_image(spec, cfg: ImageConfig = ImageConfig()) -> np.ndarray:
    """Normalize, resize to ``size x size`` and colour a spectral matrix.

    Returns an array of shape ``[size, size, 3]`` with entries in [0, 1].
    """
    if isinstance(spec, (LogMelSpectrogram, MfccMatrix)):
        spec = spec.values
    spec = np.asarray(spec, dtype=np.float64)
    if spec.size == 0:
        raise ValueError("cannot image an empty matrix")
    img = resize_bilinear(normalize_minmax(spec), cfg.size, cfg.size)
    # bilinear weights can overshoot 1 by an ulp
    img = np.clip(img, 0.0, 1.0)
    if cfg.colormap is None:
        return np.repeat(img[:, :, None], 3, axis=2)
    return apply_colormap(img, cfg.colormap)
