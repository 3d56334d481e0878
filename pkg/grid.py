"""
Periodic square lattice, images and label fields defined on it, and the
decimation geometry that produces the coarse lattice and coarse image.

Arrays are stored row-major with shape (height, width, ...), so site (x, y)
has index y * width + x.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from errors import UsageError

# Neighbour order returned by Torus.neighbors: E, W, S, N
DIRECTIONS: Tuple[Tuple[int, int], ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class Torus:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise UsageError(f"torus dimensions must be integers, got {self.width}x{self.height}")
        if self.width < 2 or self.height < 2:
            raise UsageError(f"torus must be at least 2x2, got {self.width}x{self.height}")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def num_sites(self) -> int:
        return self.width * self.height

    @property
    def num_edges(self) -> int:
        """2*W*H, minus the parallel edges merged on an axis of length 2"""
        across = self.height * (1 if self.width == 2 else self.width)
        down = self.width * (1 if self.height == 2 else self.height)
        return across + down

    @property
    def directions(self) -> Tuple[int, ...]:
        """
        Indices into DIRECTIONS that reach distinct edges. On an axis of
        length 2 both directions reach the same neighbour over one edge, so
        W (or N) is dropped.
        """
        return tuple(d for d in range(4)
                     if not (d == 1 and self.width == 2) and not (d == 3 and self.height == 2))

    def site_index(self, x: int, y: int) -> int:
        return (y % self.height) * self.width + (x % self.width)

    def coords(self, site: int) -> Tuple[int, int]:
        self._check_site(site)
        return site % self.width, site // self.width

    def neighbors(self, site: int) -> Tuple[int, int, int, int]:
        """Return the E, W, S, N neighbours of a site with periodic wrap"""
        x, y = self.coords(site)
        return tuple(self.site_index(x + dx, y + dy) for dx, dy in DIRECTIONS)

    def edges(self) -> np.ndarray:
        """
        All undirected edges as an (|E|, 2) array: first the (site, east
        neighbour) pairs, then the (site, south neighbour) pairs. On an axis
        of length 2 each neighbour pair is listed once, from column 0 (or
        row 0), so the lattice stays a simple graph.
        """
        sites = np.arange(self.num_sites).reshape(self.shape)
        east = np.roll(sites, -1, axis=1)
        south = np.roll(sites, -1, axis=0)
        cols = slice(0, 1) if self.width == 2 else slice(None)
        rows = slice(0, 1) if self.height == 2 else slice(None)
        return np.concatenate([
            np.stack([sites[:, cols].ravel(), east[:, cols].ravel()], axis=1),
            np.stack([sites[rows].ravel(), south[rows].ravel()], axis=1),
        ])

    def _check_site(self, site: int):
        if not 0 <= site < self.num_sites:
            raise UsageError(f"site index {site} out of range for {self.width}x{self.height} torus")


@dataclass(frozen=True, eq=False)
class ColorImage:
    """Per-site (R, G, B) intensities, shape (H, W, 3), any finite reals"""
    torus: Torus
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64)
        if pixels.shape != self.torus.shape + (3,):
            raise UsageError(f"pixel array shape {pixels.shape} does not match torus {self.torus.shape}")
        if not np.all(np.isfinite(pixels)):
            raise UsageError("color image contains non-finite intensities")
        pixels.setflags(write=False)
        object.__setattr__(self, 'pixels', pixels)

    @classmethod
    def from_array(cls, pixels) -> 'ColorImage':
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise UsageError(f"expected an (H, W, 3) array, got shape {pixels.shape}")
        return cls(Torus(pixels.shape[1], pixels.shape[0]), pixels)

    def colors(self) -> np.ndarray:
        """Flat (|V|, 3) view in site-index order"""
        return self.pixels.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class LabelField:
    """Per-site labels in {0..q-1}, shape (H, W)"""
    torus: Torus
    labels: np.ndarray
    q: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != self.torus.shape:
            raise UsageError(f"label array shape {labels.shape} does not match torus {self.torus.shape}")
        if self.q < 2:
            raise UsageError(f"q must be >= 2, got {self.q}")
        labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.q):
            raise UsageError(f"labels must lie in [0, {self.q - 1}]")
        labels.setflags(write=False)
        object.__setattr__(self, 'labels', labels)


@dataclass(frozen=True, eq=False)
class SiteIndexMap:
    """Coarse lattice plus, per coarse site, the index of its fine-lattice origin"""
    fine: Torus
    coarse: Torus
    stride: int
    fine_sites: np.ndarray


def coarse_sites(t: Torus, R: int) -> SiteIndexMap:
    """
    Build V^(R) for an even number R of RG steps: two steps equal one
    stride-2 subsampling, remainder rows/columns are dropped, and the coarse
    lattice keeps periodic boundaries.
    """
    if int(R) != R or R < 0:
        raise UsageError(f"number of RG steps must be a non-negative integer, got {R}")
    if R % 2:
        raise UsageError(f"number of RG steps R must be even, got {R}")
    stride = 2 ** (R // 2)
    width, height = t.width // stride, t.height // stride
    if width < 2 or height < 2:
        raise UsageError(
            f"R={R} (stride {stride}) leaves a {width}x{height} lattice from "
            f"{t.width}x{t.height}; at least 2x2 is required"
        )
    coarse = Torus(width, height)
    ys, xs = np.mgrid[0:height, 0:width]
    fine_sites = (stride * ys) * t.width + stride * xs
    fine_sites.setflags(write=False)
    return SiteIndexMap(fine=t, coarse=coarse, stride=stride, fine_sites=fine_sites)


def extract_coarse_image(img: ColorImage, m: SiteIndexMap) -> ColorImage:
    """Copy the pixel values of the mapped fine sites, with no averaging"""
    if img.torus != m.fine:
        raise UsageError(
            f"site map was built for a {m.fine.width}x{m.fine.height} torus, "
            f"image is {img.torus.width}x{img.torus.height}"
        )
    pixels = img.colors()[m.fine_sites.ravel()].reshape(m.coarse.shape + (3,))
    return ColorImage(m.coarse, pixels)
