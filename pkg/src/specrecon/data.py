"""Hyperspectral cubes, RGB synthesis, patches, augmentation and fold splits.

Images are channel-first throughout: an RGB image is ``(3, h, w)`` and a cube's
``data`` is ``(c, h, w)``, so adding a leading batch axis gives the network's
NCHW layout directly.
"""
import csv
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CoverageError, FormatError, ShapeError

DEFAULT_WAVELENGTHS = np.arange(400, 701, 10, dtype=np.float32)


@dataclass
class HyperCube:
    data: np.ndarray
    wavelengths: np.ndarray = field(default_factory=lambda: DEFAULT_WAVELENGTHS.copy())

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float32)
        if self.data.ndim != 3:
            raise ShapeError(f"cube data must be (c, h, w), got {self.data.shape}", axis="ndim")
        if self.wavelengths.shape != (self.data.shape[0],):
            raise ShapeError(f"{len(self.wavelengths)} wavelengths for {self.data.shape[0]} bands", axis="c")
        if np.any(np.diff(self.wavelengths) <= 0):
            raise ValueError("wavelengths must be strictly increasing")

    @property
    def c(self):
        return self.data.shape[0]

    @property
    def h(self):
        return self.data.shape[1]

    @property
    def w(self):
        return self.data.shape[2]

    def check_radiance(self):
        """Raise if any value is negative or non-finite (ground-truth cubes only)."""
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cube contains non-finite values")
        if np.any(self.data < 0):
            raise ValueError("cube contains negative radiance")
        return self


# ---------------------------------------------------------------- responses

@dataclass
class SpectralResponse:
    name: str
    wavelengths: np.ndarray
    curves: np.ndarray  # (3, len(wavelengths))

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        self.curves = np.asarray(self.curves, dtype=np.float64)
        if self.curves.shape != (3, len(self.wavelengths)):
            raise ShapeError(f"response curves must be (3, {len(self.wavelengths)}), got {self.curves.shape}")
        if np.any(np.diff(self.wavelengths) <= 0):
            raise ValueError("response wavelengths must be strictly increasing")
        if np.any(self.curves < 0):
            raise ValueError("response values must be >= 0")

    def sample(self, wavelengths):
        """Curves linearly interpolated at ``wavelengths``; shape ``(3, len(wavelengths))``."""
        wavelengths = np.asarray(wavelengths, dtype=np.float64)
        lo, hi = self.wavelengths[0], self.wavelengths[-1]
        missing = [float(wl) for wl in wavelengths if wl < lo or wl > hi]
        if missing:
            raise CoverageError(missing)
        return np.stack([np.interp(wavelengths, self.wavelengths, c) for c in self.curves])


def load_response_csv(path, name=None):
    """Read a ``wavelength_nm,c1,c2,c3`` CSV with one header line."""
    path = Path(path)
    wl, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            next(reader)
        except StopIteration:
            raise FormatError("empty response file", offset=1, path=path) from None
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 4:
                raise FormatError(f"expected 4 columns, got {len(row)}", offset=lineno, path=path)
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise FormatError(f"non-numeric value in {row}", offset=lineno, path=path) from None
            wl.append(vals[0])
            rows.append(vals[1:])
    if not rows:
        raise FormatError("response file has no data rows", offset=2, path=path)
    return SpectralResponse(name or path.stem, np.array(wl), np.array(rows).T)


def cie1964():
    """CIE 1964 10-degree standard observer (360-830 nm, 5 nm steps)."""
    ref = resources.files("specrecon") / "data" / "cie1964_10deg.csv"
    with resources.as_file(ref) as path:
        return load_response_csv(path, name="cie1964_10deg")


def trapezoid_weights(wavelengths):
    wl = np.asarray(wavelengths, dtype=np.float64)
    if len(wl) == 1:
        return np.ones(1)
    d = np.diff(wl)
    w = np.zeros_like(wl)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def integrate_response(cube, response):
    """Unnormalized tristimulus image ``(3, h, w)``: trapezoid rule over the cube's bands."""
    kernel = response.sample(cube.wavelengths) * trapezoid_weights(cube.wavelengths)
    return np.tensordot(kernel, cube.data.astype(np.float64), axes=(1, 0))


def synthesize_rgb(cube, response):
    """RGB image ``(3, h, w)`` float32, scaled so its maximum is 1 (all-zero stays zero)."""
    rgb = integrate_response(cube, response)
    peak = rgb.max()
    if peak > 0:
        rgb = rgb / peak
    return rgb.astype(np.float32)


# ---------------------------------------------------------------- patches

@dataclass
class PatchPair:
    rgb: np.ndarray  # (3, patch_in, patch_in)
    label: np.ndarray  # (c, patch_out, patch_out)
    origin: tuple  # (row, col) of the rgb window in the source image


def _grid(size, patch, stride):
    return list(range(0, size - patch + 1, stride))


def extract_patches(rgb, cube, patch_in=36, patch_out=20, stride=20):
    """Input/label pairs on a regular grid; each label is the centered window of the cube."""
    cube = np.asarray(getattr(cube, "data", cube))
    if rgb.shape[1:] != cube.shape[1:]:
        raise ShapeError(f"rgb {rgb.shape} and cube {cube.shape} are not registered")
    if (patch_in - patch_out) % 2 or patch_out > patch_in:
        raise ValueError("patch_in - patch_out must be even and non-negative")
    h, w = rgb.shape[1:]
    if h < patch_in or w < patch_in:
        warnings.warn(f"image {h}x{w} smaller than patch {patch_in}; no patches extracted")
        return []
    off = (patch_in - patch_out) // 2
    pairs = []
    for y in _grid(h, patch_in, stride):
        for x in _grid(w, patch_in, stride):
            pairs.append(PatchPair(
                rgb[:, y:y + patch_in, x:x + patch_in].copy(),
                cube[:, y + off:y + off + patch_out, x + off:x + off + patch_out].copy(),
                (y, x),
            ))
    return pairs


# ---------------------------------------------------------------- augmentation

AUG_ROTATIONS = (0, 1, 2, 3)
AUG_FLIPS = (False, True)
AUG_SCALES = (1.0, 0.9, 0.8, 0.7)


def resize_bilinear(img, scale):
    """Bilinear resize of ``(c, h, w)`` with pixel-center alignment and edge clamping."""
    c, h, w = img.shape
    oh, ow = max(1, int(round(h * scale))), max(1, int(round(w * scale)))

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, (src - i0).astype(img.dtype)

    y0, y1, fy = axis_weights(h, oh)
    x0, x1, fx = axis_weights(w, ow)
    rows = img[:, y0, :] * (1 - fy)[None, :, None] + img[:, y1, :] * fy[None, :, None]
    return rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx


def dihedral(img, k, flip):
    """Rotate the spatial axes of ``(c, h, w)`` by ``k`` quarter turns, then mirror left-right."""
    out = np.rot90(img, k, axes=(1, 2))
    if flip:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def dihedral_inverse(img, k, flip):
    out = img[:, :, ::-1] if flip else img
    return np.ascontiguousarray(np.rot90(out, -k, axes=(1, 2)))


@dataclass
class AugmentedPair:
    rotation: int
    flip: bool
    scale: float
    rgb: np.ndarray
    cube: np.ndarray


def augment(rgb, cube):
    """All 32 combinations of 4 rotations x {no flip, flip} x 4 scales."""
    cube = np.asarray(getattr(cube, "data", cube))
    if rgb.shape[1:] != cube.shape[1:]:
        raise ShapeError(f"rgb {rgb.shape} and cube {cube.shape} are not registered")
    out = []
    for k in AUG_ROTATIONS:
        for flip in AUG_FLIPS:
            r, c = dihedral(rgb, k, flip), dihedral(cube, k, flip)
            for s in AUG_SCALES:
                if s == 1.0:
                    out.append(AugmentedPair(k, flip, s, r, c))
                else:
                    out.append(AugmentedPair(k, flip, s, resize_bilinear(r, s), resize_bilinear(c, s)))
    return out


@dataclass
class PatchDataset:
    rgb: np.ndarray  # (N, 3, patch_in, patch_in)
    label: np.ndarray  # (N, c, patch_out, patch_out)

    def __len__(self):
        return len(self.rgb)

    def sample(self, rng, batch_size):
        """Uniform draw with replacement."""
        idx = rng.integers(0, len(self), size=batch_size)
        return self.rgb[idx], self.label[idx]


def build_patch_dataset(images, patch_in=36, patch_out=20, stride=20, augmentation=True,
                        dtype=np.float32):
    """Patch pool from ``(rgb, cube)`` image pairs, optionally expanded by :func:`augment`."""
    rgbs, labels = [], []
    for rgb, cube in images:
        members = augment(rgb, cube) if augmentation else [AugmentedPair(0, False, 1.0, rgb, np.asarray(getattr(cube, "data", cube)))]
        for m in members:
            for p in extract_patches(m.rgb, m.cube, patch_in, patch_out, stride):
                rgbs.append(p.rgb)
                labels.append(p.label)
    if not rgbs:
        return PatchDataset(np.empty((0, 3, patch_in, patch_in), dtype), np.empty((0, 0, patch_out, patch_out), dtype))
    return PatchDataset(np.stack(rgbs).astype(dtype), np.stack(labels).astype(dtype))


# ---------------------------------------------------------------- folds

@dataclass
class FoldSplit:
    """``assignments`` maps image name to 0/1 (two-fold) or "train"/"test" (provided)."""

    assignments: dict
    mode: str = "two_fold"

    def eval_folds(self):
        return [0, 1] if self.mode == "two_fold" else ["test"]

    def test_names(self, fold):
        return [n for n, f in self.assignments.items() if f == fold]

    def train_names(self, fold):
        if self.mode == "two_fold":
            return [n for n, f in self.assignments.items() if f != fold]
        return [n for n, f in self.assignments.items() if f == "train"]


def _check_unique(names):
    seen, dupes = set(), []
    for n in names:
        if n in seen:
            dupes.append(n)
        seen.add(n)
    if dupes:
        raise ValueError(f"duplicate image names: {sorted(set(dupes))}")


def make_folds(image_names, mode="two_fold", seed=0, split_file=None):
    if mode == "provided":
        if split_file is None:
            raise ValueError("provided mode needs a split file")
        split = read_split_file(split_file)
        missing = [n for n in image_names if n not in split.assignments]
        if missing:
            raise ValueError(f"images missing from split file: {missing}")
        return split
    if mode != "two_fold":
        raise ValueError(f"unknown fold mode {mode!r}")
    names = list(image_names)
    _check_unique(names)
    if len(names) < 2:
        raise ValueError("two-fold split needs at least 2 images")
    order = np.random.default_rng(seed).permutation(len(names))
    half = (len(names) + 1) // 2
    assignments = {names[i]: (0 if rank < half else 1) for rank, i in enumerate(order)}
    return FoldSplit({n: assignments[n] for n in names}, "two_fold")


def read_split_file(path):
    """Parse ``name,fold`` lines. Folds are either all integers or all train/test."""
    path = Path(path)
    entries = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise FormatError("expected 'name,fold'", offset=lineno, path=path)
            entries.append((row[0].strip(), row[1].strip()))
    _check_unique([n for n, _ in entries])
    folds = {f for _, f in entries}
    if folds <= {"train", "test"}:
        return FoldSplit(dict(entries), "provided")
    try:
        return FoldSplit({n: int(f) for n, f in entries}, "two_fold")
    except ValueError:
        raise FormatError(f"fold labels must be integers or train/test, got {sorted(folds)}", path=path) from None


def write_split_file(split, path):
    with open(path, "w", newline="") as fh:
        for name, fold in split.assignments.items():
            fh.write(f"{name},{fold}\n")
