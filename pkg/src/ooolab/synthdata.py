"""Procedural seven-factor sprite dataset with known ground-truth factors.

Factors (default cardinalities): shape 3, scale 6, orientation 8, pos_x 8,
pos_y 8, object colour 4, background colour 4.  Images are 32x32 RGB floats.
Rasterization goes through :mod:`ooolab.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .kernels import render_masks as _render_masks

IMAGE_SHAPE = (32, 32, 3)
IMAGE_SIZE = 32 * 32 * 3

OBJECT_COLOURS = np.array([
    [1.0, 1.0, 1.0],
    [1.0, 0.25, 0.25],
    [0.25, 1.0, 0.25],
    [1.0, 1.0, 0.25],
])
BACKGROUND_COLOURS = np.array([
    [0.0, 0.0, 0.0],
    [0.125, 0.125, 0.5],
    [0.5, 0.125, 0.125],
    [0.25, 0.25, 0.25],
])


@dataclass(frozen=True)
class FactorSpace:
    names: tuple = ("shape", "scale", "orientation", "pos_x", "pos_y",
                    "object_colour", "background_colour")
    cardinalities: tuple = (3, 6, 8, 8, 8, 4, 4)

    def __post_init__(self):
        if len(self.names) != len(self.cardinalities):
            raise ConfigurationError("names and cardinalities differ in length")
        if any(c < 2 for c in self.cardinalities):
            raise ConfigurationError("every factor needs at least two values")

    @property
    def d(self) -> int:
        return len(self.cardinalities)

    @property
    def cards(self) -> np.ndarray:
        return np.asarray(self.cardinalities, dtype=np.int64)

    @property
    def size(self) -> int:
        return factor_space_size(self)

    def validate(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        if codes.shape[-1] != self.d:
            raise ContractViolation(f"expected {self.d} factor codes, got {codes.shape[-1]}")
        if (codes < 0).any() or (codes >= self.cards).any():
            raise ContractViolation("factor code out of range")
        return codes


DEFAULT_SPACE = FactorSpace()


def factor_space_size(space: FactorSpace) -> int:
    return int(np.prod(space.cardinalities, dtype=np.int64))


def sample_factors(rng: np.random.Generator, space: FactorSpace = DEFAULT_SPACE, n=None):
    """Independent uniform codes per factor; shape (d,) or (n, d)."""
    size = (space.d,) if n is None else (n, space.d)
    return rng.integers(0, space.cards, size=size, dtype=np.int64)


def flat_index(codes, space: FactorSpace = DEFAULT_SPACE) -> np.ndarray:
    """Row-major index of each factor vector in the full factor grid."""
    codes = np.asarray(codes, dtype=np.int64)
    return np.ravel_multi_index(tuple(np.moveaxis(codes, -1, 0)), space.cardinalities)


def all_factors(space: FactorSpace = DEFAULT_SPACE) -> np.ndarray:
    grids = np.indices(space.cardinalities).reshape(space.d, -1)
    return grids.T.astype(np.int64)


def render_batch(codes) -> np.ndarray:
    """Render an (n, 7) code array into (n, 32, 32, 3) float images in [0, 1]."""
    codes = DEFAULT_SPACE.validate(np.atleast_2d(codes))
    mask = _render_masks(np.ascontiguousarray(codes))[..., None].astype(bool)
    fg = OBJECT_COLOURS[codes[:, 5]][:, None, None, :]
    bg = BACKGROUND_COLOURS[codes[:, 6]][:, None, None, :]
    return np.where(mask, fg, bg)


def render(fv) -> np.ndarray:
    return render_batch(np.asarray(fv)[None])[0]


def object_mask(codes) -> np.ndarray:
    codes = DEFAULT_SPACE.validate(np.atleast_2d(codes))
    return _render_masks(np.ascontiguousarray(codes)).astype(bool)


def flat_images(codes) -> np.ndarray:
    """Rendered images flattened to (n, 3072) rows, the encoder input layout."""
    return render_batch(codes).reshape(len(np.atleast_2d(codes)), IMAGE_SIZE)


def write_ppm(path, image: np.ndarray):
    """Binary P6 PPM of an (h, w, 3) float image."""
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    w, h = int(parts[1]), int(parts[2])
    pixels = np.frombuffer(parts[4], dtype=np.uint8)[: w * h * 3]
    return pixels.reshape(h, w, 3) / 255.0


def preview_grid(codes, cols=8, pad=1) -> np.ndarray:
    images = render_batch(codes)
    n = len(images)
    rows = -(-n // cols)
    cell = 32 + pad
    grid = np.full((rows * cell + pad, cols * cell + pad, 3), 0.5)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        grid[pad + r * cell: pad + r * cell + 32, pad + c * cell: pad + c * cell + 32] = img
    return grid


def write_previews(out_dir, seed=0, n_grids=4, per_grid=64) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for g in range(n_grids):
        path = out_dir / f"preview_{g:02d}.ppm"
        write_ppm(path, preview_grid(sample_factors(rng, n=per_grid)))
        paths.append(path)
    return paths
