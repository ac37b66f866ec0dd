"""SSIM on 8-bit images, per-split evaluation and seed aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .cabin import Image8, restore
from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigurationError(f"window size must be odd and positive, got {self.window}")
        if self.k1 <= 0 or self.k2 <= 0 or self.sigma <= 0:
            raise ConfigurationError("k1, k2 and sigma must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


DEFAULT_SSIM = SsimConfig()


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    g = gaussian_kernel_1d(size, sigma)
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # the 2-D window is separable: filter rows then columns, no padding
    n = len(g)
    tmp = sliding_window_view(img, n, axis=0) @ g
    return sliding_window_view(tmp, n, axis=1) @ g


def ssim_map(a: np.ndarray, b: np.ndarray, cfg: SsimConfig = DEFAULT_SSIM) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < cfg.window:
        raise ShapeError(f"image {a.shape} is smaller than the {cfg.window}x{cfg.window} window")
    g = gaussian_kernel_1d(cfg.window, cfg.sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    c1, c2 = cfg.c1, cfg.c2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: Image8 | np.ndarray, b: Image8 | np.ndarray, cfg: SsimConfig = DEFAULT_SSIM) -> float:
    """Mean Gaussian-window SSIM over all window positions that fit inside the image."""
    pa = a.pixels if isinstance(a, Image8) else a
    pb = b.pixels if isinstance(b, Image8) else b
    return float(ssim_map(pa, pb, cfg).mean())


@dataclass
class MetricReport:
    case_ids: list[int]
    ssim: list[float]
    mse: list[float]
    ssim_mean: float = field(init=False)
    ssim_std: float = field(init=False)
    mse_mean: float = field(init=False)

    def __post_init__(self):
        if self.ssim:
            self.ssim_mean, self.ssim_std = mean_std(self.ssim)
            self.mse_mean = mean_std(self.mse)[0]
        else:
            self.ssim_mean = self.ssim_std = self.mse_mean = float("nan")


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    if len(values) == 0:
        raise ConfigurationError("cannot aggregate an empty list")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def target_bbox(pixel_map) -> tuple[slice, slice]:
    c = pixel_map.coords
    if not len(c):
        return slice(None), slice(None)
    return slice(c[:, 0].min(), c[:, 0].max() + 1), slice(c[:, 1].min(), c[:, 1].max() + 1)


def evaluate_model(model, ids: Sequence[int], dataset, pixel_map=None, *,
                   bbox_only: bool = False, cfg: SsimConfig = DEFAULT_SSIM) -> MetricReport:
    """Predict each case, restore it into an image and score it against ground truth.

    MSE is measured on the raw (unquantized) predictions in target space.
    """
    from .nn import model_forward

    pixel_map = dataset.pixel_map if pixel_map is None else pixel_map
    if model.output_dim != len(pixel_map) or model.input_dim != dataset.inputs.shape[1]:
        raise ShapeError(
            f"model maps {model.input_dim}->{model.output_dim}, "
            f"data has {dataset.inputs.shape[1]} inputs and {len(pixel_map)} targets"
        )
    ids = list(ids)
    if not ids:
        return MetricReport([], [], [])
    preds = model_forward(model, dataset.inputs[ids].astype(model.dtype)).prediction
    rows, cols = target_bbox(pixel_map) if bbox_only else (slice(None), slice(None))
    ssims, mses = [], []
    for cid, pred in zip(ids, preds):
        img = restore(pred, pixel_map)
        truth = dataset.images[cid]
        ssims.append(ssim(img.pixels[rows, cols], truth[rows, cols], cfg))
        diff = pred - dataset.targets[cid]
        mses.append(float(np.mean(diff * diff)))
    return MetricReport(ids, ssims, mses)


def aggregate_over_seeds(reports: Sequence[MetricReport]) -> tuple[float, float]:
    """Mean and population std of the per-seed mean SSIMs."""
    if not reports:
        raise ConfigurationError("no reports to aggregate")
    return mean_std([r.ssim_mean for r in reports])
