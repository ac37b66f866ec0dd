"""Synthetic cabin temperature oracle.

Stands in for the CFD solve: every operating case maps to a smooth steady
temperature field on a fixed pixel grid, made of two Gaussian vent plumes
mixed convexly with the ambient air and a solar hot spot. Fields are then
quantized to 8-bit images on a fixed 0-60 degC scale.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigurationError, DataError, ShapeError

ORACLE_VERSION = "gaussian-plume-v1"

SOLAR_LOADS = (500, 600, 700, 800, 900, 1000)
SUN_ALTITUDES = (45, 90)
SUN_AZIMUTHS = (-90, 90)
DISCHARGE_TEMPS = (5, 10, 15)
FLOW_RATES = (50, 100, 150, 200, 250, 300)
AMBIENT_TEMPS = (20, 25, 30, 35, 40)

DOMAINS = {
    "solar_load": SOLAR_LOADS,
    "sun_altitude": SUN_ALTITUDES,
    "sun_azimuth": SUN_AZIMUTHS,
    "discharge_temp": DISCHARGE_TEMPS,
    "flow_rate": FLOW_RATES,
    "ambient_temp": AMBIENT_TEMPS,
}

DEFAULT_WIDTH, DEFAULT_HEIGHT = 96, 64
BORDER = 3
BORDER_TEMP = 0.0
TEMP_SCALE = (0.0, 60.0)

VENTS = ((0.25, 0.12), (0.75, 0.12))
SOLAR_SIGMA = 0.12
MAX_FLOW = 300.0


class CaseSpec(NamedTuple):
    solar_load: float
    sun_altitude: float
    sun_azimuth: float
    discharge_temp: float
    flow_rate: float
    ambient_temp: float


CASE_FIELDS = CaseSpec._fields


@dataclass
class FieldGrid:
    width: int
    height: int
    temps: np.ndarray  # (height, width) float64, degC

    def __post_init__(self):
        if self.temps.shape != (self.height, self.width):
            raise ShapeError(f"field shape {self.temps.shape} != ({self.height}, {self.width})")


@dataclass
class Image8:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.shape != (self.height, self.width):
            raise ShapeError(f"image shape {self.pixels.shape} != ({self.height}, {self.width})")
        if self.pixels.dtype != np.uint8:
            raise ShapeError(f"image pixels must be uint8, got {self.pixels.dtype}")

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "Image8":
        pixels = np.asarray(pixels)
        return cls(pixels.shape[1], pixels.shape[0], pixels)

    def __eq__(self, other):
        return (
            isinstance(other, Image8)
            and self.pixels.shape == other.pixels.shape
            and bool(np.array_equal(self.pixels, other.pixels))
        )


def enumerate_cases() -> list[CaseSpec]:
    """Full factorial grid, lexicographic in field order, each domain ascending."""
    return [CaseSpec(*c) for c in itertools.product(*DOMAINS.values())]


def pixel_centers(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    return np.meshgrid(u, v)


def border_mask(width: int, height: int, border: int = BORDER) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    mask[:border, :] = mask[-border:, :] = True
    mask[:, :border] = mask[:, -border:] = True
    return mask


def synth_field(case: CaseSpec, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> FieldGrid:
    if width < 16 or height < 16:
        raise ConfigurationError(f"grid {width}x{height} is below the 16x16 minimum")
    S, alt, az, t_dis, flow, t_amb = (float(x) for x in case)
    u, v = pixel_centers(width, height)

    q = flow / MAX_FLOW
    sig_u = 0.06 + 0.10 * q
    sig_v = 0.18 + 0.25 * q
    w_jet = np.zeros_like(u)
    for uk, vk in VENTS:
        w_jet += q * np.exp(-((u - uk) ** 2 / (2 * sig_u**2) + (v - vk) ** 2 / (2 * sig_v**2)))
    np.minimum(w_jet, 1.0, out=w_jet)

    u_s = 0.5 + 0.3 * (az / 90.0)
    v_s = 0.35 + 0.3 * (1.0 - alt / 90.0)
    sun = 15.0 * (S / 1000.0) * np.sin(np.deg2rad(alt))
    bump = np.exp(-((u - u_s) ** 2 + (v - v_s) ** 2) / (2 * SOLAR_SIGMA**2))

    temps = t_amb + (t_dis - t_amb) * w_jet + sun * bump * (1.0 - w_jet)
    temps[border_mask(width, height)] = BORDER_TEMP
    return FieldGrid(width, height, temps)


def _quantize(unit: np.ndarray) -> np.ndarray:
    # round half up; inputs are already clamped to [0, 1]
    return np.floor(unit * 255.0 + 0.5).astype(np.uint8)


def render(field: FieldGrid) -> Image8:
    lo, hi = TEMP_SCALE
    unit = (np.clip(field.temps, lo, hi) - lo) / (hi - lo)
    pixels = _quantize(unit)
    pixels[border_mask(field.width, field.height)] = 0
    return Image8(field.width, field.height, pixels)


def restore(values: np.ndarray, pixel_map) -> Image8:
    """Write predicted target values (0..1 scale) into the map's background template."""
    values = np.asarray(values, dtype=np.float64)
    coords = pixel_map.coords
    if values.shape != (len(coords),):
        raise ShapeError(f"expected {len(coords)} values, got shape {values.shape}")
    pixels = pixel_map.background.pixels.copy()
    if len(coords):
        pixels[coords[:, 0], coords[:, 1]] = _quantize(np.clip(values, 0.0, 1.0))
    return Image8(pixel_map.background.width, pixel_map.background.height, pixels)


def render_stack(cases: Iterable[CaseSpec], width: int = DEFAULT_WIDTH,
                 height: int = DEFAULT_HEIGHT) -> np.ndarray:
    """Rendered images for ``cases`` as a ``(N, height, width)`` uint8 array."""
    return np.stack([render(synth_field(c, width, height)).pixels for c in cases])


# ---------------------------------------------------------------- PGM I/O


def encode_pgm(img: Image8) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes()


def decode_pgm(data: bytes) -> Image8:
    """Parse a binary (P5) PGM with maxval 255; ``#`` comments are allowed in the header."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise DataError(f"unsupported PGM magic {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DataError(f"bad PGM header: {exc}") from None
    if maxval != 255:
        raise DataError(f"only maxval 255 is supported, got {maxval}")
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise DataError(f"PGM raster has {len(raster)} bytes, expected {width * height}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()
    return Image8(width, height, pixels)


def write_pgm(path: str | Path, img: Image8) -> None:
    Path(path).write_bytes(encode_pgm(img))


def read_pgm(path: str | Path) -> Image8:
    try:
        return decode_pgm(Path(path).read_bytes())
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- corpus


def image_name(case_id: int) -> str:
    return f"case_{case_id:04d}.pgm"


def write_case_table(path: str | Path, cases: list[CaseSpec]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("case_id",) + CASE_FIELDS)
        for i, c in enumerate(cases):
            w.writerow((i,) + tuple(_fmt_num(x) for x in c))


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def read_case_table(path: str | Path) -> list[CaseSpec]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["case_id", *CASE_FIELDS]:
            raise DataError(f"{path}: unexpected header {reader.fieldnames}")
        cases = []
        for i, row in enumerate(reader):
            if int(row["case_id"]) != i:
                raise DataError(f"{path}: case ids must be 0..N-1 in order")
            cases.append(CaseSpec(*(float(row[k]) for k in CASE_FIELDS)))
    return cases


def write_manifest(path: str | Path, entries: dict) -> None:
    lines = [f"{k} = {v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}: malformed line {raw!r}")
        out[key.strip()] = value.strip()
    return out


def generate_corpus(out: str | Path, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                    seed: int = 0) -> Path:
    """Write ``cases.csv``, ``images/case_NNNN.pgm`` and ``manifest.txt`` under ``out``.

    The oracle is deterministic; ``seed`` is recorded only so downstream
    commands can default to it.
    """
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    cases = enumerate_cases()
    write_case_table(out / "cases.csv", cases)
    for i, case in enumerate(cases):
        write_pgm(out / "images" / image_name(i), render(synth_field(case, width, height)))
    write_manifest(out / "manifest.txt", {
        "oracle_version": ORACLE_VERSION,
        "width": width,
        "height": height,
        "cases": len(cases),
        "temp_scale_min": TEMP_SCALE[0],
        "temp_scale_max": TEMP_SCALE[1],
        "border_width": BORDER,
        "seed": seed,
    })
    return out


def load_corpus(path: str | Path) -> tuple[list[CaseSpec], np.ndarray, dict]:
    path = Path(path)
    try:
        manifest = read_manifest(path / "manifest.txt")
        cases = read_case_table(path / "cases.csv")
    except FileNotFoundError as exc:
        raise DataError(f"not a corpus directory: {exc}") from None
    images = []
    for i in range(len(cases)):
        img = read_pgm(path / "images" / image_name(i))
        images.append(img.pixels)
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise ShapeError(f"{path}: images have mixed dimensions {sorted(shapes)}")
    return cases, np.stack(images), manifest
