"""Supervised data from an image stack: target pixels, input scaling, splits, subsets."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import cabin
from .cabin import CaseSpec, DOMAINS, Image8
from .errors import ConfigurationError, DataError, ShapeError

FULL_SPLIT_SIZES = (2000, 80, 80)
FULL_CASE_COUNT = 2160

_LO = np.array([min(d) for d in DOMAINS.values()], dtype=np.float64)
_HI = np.array([max(d) for d in DOMAINS.values()], dtype=np.float64)


@dataclass
class TargetPixelMap:
    coords: np.ndarray  # (P, 2) int64 (row, col), row-major order
    background: Image8
    source_hash: str = ""

    def __len__(self):
        return len(self.coords)

    @property
    def shape(self) -> tuple[int, int]:
        return self.background.height, self.background.width


@dataclass
class SplitSpec:
    train_ids: list[int]
    val_ids: list[int]
    test_ids: list[int]
    seed: int
    retries: int = 0


@dataclass
class Sample:
    input: np.ndarray
    target: np.ndarray
    case_id: int


def stack_hash(stack: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(repr(stack.shape).encode())
    h.update(np.ascontiguousarray(stack, dtype=np.uint8).tobytes())
    return h.hexdigest()[:16]


def _as_stack(stack) -> np.ndarray:
    if isinstance(stack, np.ndarray):
        arr = stack
    else:
        shapes = {im.pixels.shape if isinstance(im, Image8) else np.shape(im) for im in stack}
        if len(shapes) > 1:
            raise ShapeError(f"images have mixed dimensions {sorted(shapes)}")
        arr = np.stack([im.pixels if isinstance(im, Image8) else np.asarray(im) for im in stack])
    if arr.ndim != 3:
        raise ShapeError(f"expected a stack of 2-D images, got shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


def extract_target_pixels(stack) -> TargetPixelMap:
    """Pixels whose 8-bit value is not the same in every image become targets."""
    if not isinstance(stack, np.ndarray) and len(stack) < 2:
        raise ConfigurationError("need at least 2 images to find varying pixels")
    arr = _as_stack(stack)
    if arr.shape[0] < 2:
        raise ConfigurationError("need at least 2 images to find varying pixels")
    varying = arr.max(axis=0) != arr.min(axis=0)
    coords = np.argwhere(varying)  # row-major by construction
    background = arr[0].copy()
    background[varying] = 0
    return TargetPixelMap(coords.astype(np.int64), Image8.from_array(background), stack_hash(arr))


def normalize_input(case: Sequence[float]) -> np.ndarray:
    """Map each variable's declared domain [lo, hi] affinely onto [-1, 1]."""
    x = np.asarray(case, dtype=np.float64)
    return 2.0 * (x - _LO) / (_HI - _LO) - 1.0


def targets_from_image(img: Image8 | np.ndarray, pixel_map: TargetPixelMap) -> np.ndarray:
    pixels = img.pixels if isinstance(img, Image8) else np.asarray(img)
    if pixels.shape != pixel_map.shape:
        raise ShapeError(f"image {pixels.shape} does not match map {pixel_map.shape}")
    c = pixel_map.coords
    return pixels[c[:, 0], c[:, 1]] / 255.0


def _split_sizes(n: int, sizes: Sequence[int] | None) -> tuple[int, int, int]:
    if sizes is None:
        if n == FULL_CASE_COUNT:
            sizes = FULL_SPLIT_SIZES
        else:
            n_val = round(n * FULL_SPLIT_SIZES[1] / FULL_CASE_COUNT)
            n_test = round(n * FULL_SPLIT_SIZES[2] / FULL_CASE_COUNT)
            sizes = (n - n_val - n_test, n_val, n_test)
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or min(sizes) < 0 or sum(sizes) > n:
        raise ConfigurationError(f"split sizes {sizes} do not fit {n} cases")
    return sizes  # type: ignore[return-value]


def covers_domains(cases: Sequence[CaseSpec], ids: Sequence[int]) -> bool:
    """True if every variable takes every value of its domain among ``ids``."""
    if not len(ids):
        return False
    sub = np.array([cases[i] for i in ids], dtype=np.float64)
    for j, domain in enumerate(DOMAINS.values()):
        if not set(domain) <= set(sub[:, j].tolist()):
            return False
    return True


def split_cases(cases: Sequence[CaseSpec], seed: int, sizes: Sequence[int] | None = None,
                max_retries: int = 1000) -> SplitSpec:
    """Seeded shuffle-and-partition, re-drawn with seed+1, seed+2... until every
    split covers every domain value of the cases present."""
    n = len(cases)
    if n == 0:
        raise ConfigurationError("no cases to split")
    n_train, n_val, n_test = _split_sizes(n, sizes)
    # only require values that actually occur, so off-grid case lists still split
    present = [sorted({c[j] for c in cases}) for j in range(6)]
    need_full = all(set(p) == set(d) for p, d in zip(present, DOMAINS.values()))
    for retry in range(max_retries + 1):
        perm = np.random.default_rng(seed + retry).permutation(n)
        train = perm[:n_train].tolist()
        val = perm[n_train:n_train + n_val].tolist()
        test = perm[n_train + n_val:n_train + n_val + n_test].tolist()
        if not need_full or all(covers_domains(cases, part) for part in (train, val, test)):
            return SplitSpec(train, val, test, seed, retry)
    raise ConfigurationError(f"no covering split found within {max_retries} retries")


def sample_first_k(split: SplitSpec, seed: int, k: int) -> list[int]:
    """First ``k`` ids of a seeded shuffle of the full training list; nested in ``k``."""
    if k < 1 or k > len(split.train_ids):
        raise ConfigurationError(f"k={k} outside 1..{len(split.train_ids)}")
    order = np.random.default_rng(seed).permutation(len(split.train_ids))
    return [split.train_ids[i] for i in order[:k]]


@dataclass
class CabinDataset:
    """Cases, their images and the derived model-space arrays, held in memory."""

    cases: list[CaseSpec]
    images: np.ndarray  # (N, H, W) uint8
    pixel_map: TargetPixelMap
    inputs: np.ndarray = field(init=False)
    targets: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.cases) != len(self.images):
            raise DataError(f"{len(self.cases)} cases but {len(self.images)} images")
        if self.images.shape[1:] != self.pixel_map.shape:
            raise ShapeError(f"images {self.images.shape[1:]} vs map {self.pixel_map.shape}")
        self.inputs = np.stack([normalize_input(c) for c in self.cases])
        c = self.pixel_map.coords
        self.targets = self.images[:, c[:, 0], c[:, 1]] / 255.0

    @classmethod
    def from_images(cls, cases: list[CaseSpec], images: np.ndarray,
                    pixel_map: TargetPixelMap | None = None) -> "CabinDataset":
        if pixel_map is None:
            pixel_map = extract_target_pixels(images)
        return cls(cases, images, pixel_map)

    @classmethod
    def synthetic(cls, width: int = cabin.DEFAULT_WIDTH, height: int = cabin.DEFAULT_HEIGHT,
                  cases: list[CaseSpec] | None = None) -> "CabinDataset":
        cases = cabin.enumerate_cases() if cases is None else cases
        return cls.from_images(cases, cabin.render_stack(cases, width, height))

    def __len__(self):
        return len(self.cases)

    @property
    def output_dim(self) -> int:
        return len(self.pixel_map)

    def sample(self, case_id: int) -> Sample:
        return Sample(self.inputs[case_id], self.targets[case_id], case_id)

    def image(self, case_id: int) -> Image8:
        return Image8.from_array(self.images[case_id])


# ---------------------------------------------------------------- persistence
#
# A map directory holds
#   manifest.txt    key = value lines: height, width, count, source_hash
#   coords.csv      header "row,col", one target pixel per line, row-major
#   background.pgm  the constant-pixel template (targets written as 0)
#   split.csv       header "case_id,split" (train/val/test) in split order,
#                   which sample_first_k depends on; seed and retries go
#                   in the manifest


def save_pixel_map(out: str | Path, pixel_map: TargetPixelMap, split: SplitSpec | None = None) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    entries = {
        "height": pixel_map.background.height,
        "width": pixel_map.background.width,
        "count": len(pixel_map),
        "source_hash": pixel_map.source_hash,
    }
    if split is not None:
        entries.update(split_seed=split.seed, split_retries=split.retries)
    cabin.write_manifest(out / "manifest.txt", entries)
    with open(out / "coords.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("row", "col"))
        w.writerows(pixel_map.coords.tolist())
    cabin.write_pgm(out / "background.pgm", pixel_map.background)
    if split is not None:
        with open(out / "split.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("case_id", "split"))
            rows = [(i, "train") for i in split.train_ids] + [(i, "val") for i in split.val_ids] \
                + [(i, "test") for i in split.test_ids]
            w.writerows(rows)


def load_pixel_map(path: str | Path) -> tuple[TargetPixelMap, SplitSpec | None]:
    path = Path(path)
    try:
        manifest = cabin.read_manifest(path / "manifest.txt")
        with open(path / "coords.csv", newline="") as f:
            reader = csv.reader(f)
            if next(reader, None) != ["row", "col"]:
                raise DataError(f"{path}/coords.csv: expected header row,col")
            coords = np.array([[int(r), int(c)] for r, c in reader], dtype=np.int64).reshape(-1, 2)
        background = cabin.read_pgm(path / "background.pgm")
    except FileNotFoundError as exc:
        raise DataError(f"not a pixel-map directory: {exc}") from None
    if int(manifest["count"]) != len(coords):
        raise DataError(f"{path}: manifest count {manifest['count']} != {len(coords)} coords")
    pixel_map = TargetPixelMap(coords, background, manifest.get("source_hash", ""))

    split = None
    if (path / "split.csv").exists():
        parts: dict[str, list[int]] = {"train": [], "val": [], "test": []}
        with open(path / "split.csv", newline="") as f:
            for row in csv.DictReader(f):
                parts[row["split"]].append(int(row["case_id"]))
        split = SplitSpec(parts["train"], parts["val"], parts["test"],
                          int(manifest.get("split_seed", 0)), int(manifest.get("split_retries", 0)))
    return pixel_map, split
