"""24 hand-defined tile features standing in for learned CNN embeddings.

The set targets the artifact morphologies this pipeline screens for:
Laplacian variance and high-frequency ratio separate blur, autocorrelation
peaks catch periodic chatter banding, hue bins catch pen ink, and the
white/dark/green fractions catch blank glass, folds, and unscanned fill.
All statistics are computed over the tile's valid region with channels
normalized to [0, 1].
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter

from ..pyramid import RasterTile

FEATURE_NAMES = (
    "mean_r", "mean_g", "mean_b",
    "std_r", "std_g", "std_b",
    "mean_saturation",
    "mean_luminance",
    "white_fraction",
    "dark_fraction",
    "green_fill_fraction",
    "laplacian_variance",
    "mean_gradient",
    "hf_energy_ratio",
    "hue_bin_0", "hue_bin_1", "hue_bin_2", "hue_bin_3",
    "hue_bin_4", "hue_bin_5", "hue_bin_6", "hue_bin_7",
    "row_autocorr_peak",
    "col_autocorr_peak",
)

WHITE_LUMINANCE = 0.88
DARK_LUMINANCE = 0.25
GREEN_FILL = np.array([0.0, 1.0, 0.0])
AUTOCORR_LAGS = range(4, 33)


class FeatureError(Exception):
    """Tile has no valid pixels to featurize."""


# Luminance profiles live in [0, 1]; below this the signal is numerically flat.
_FLAT_STD = 1e-12


def _autocorr_peak(signal: np.ndarray) -> float:
    """Max Pearson correlation of the signal with its lagged self; 0 if flat."""
    if len(signal) < 6 or float(np.std(signal)) <= _FLAT_STD:
        return 0.0
    best = 0.0
    found = False
    for lag in AUTOCORR_LAGS:
        if len(signal) - lag < 2:
            break
        a = signal[:-lag]
        b = signal[lag:]
        sa, sb = float(np.std(a)), float(np.std(b))
        if sa <= _FLAT_STD or sb <= _FLAT_STD:
            r = 0.0
        else:
            r = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
        best = r if not found else max(best, r)
        found = True
    return best if found else 0.0


def extract_features(tile: RasterTile) -> np.ndarray:
    region = tile.valid_region()
    if region.size == 0:
        raise FeatureError("tile has zero valid area")
    rgb = region.astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    lum = 0.299 * r + 0.587 * g + 0.114 * b

    cmax = rgb.max(axis=-1)
    cmin = rgb.min(axis=-1)
    delta = cmax - cmin
    with np.errstate(invalid="ignore", divide="ignore"):
        saturation = np.where(cmax > 0, delta / np.where(cmax > 0, cmax, 1.0), 0.0)

    white_fraction = float(np.mean(lum >= WHITE_LUMINANCE))
    dark_fraction = float(np.mean(lum <= DARK_LUMINANCE))
    green_fill_fraction = float(
        np.mean(np.all(np.abs(rgb - GREEN_FILL[None, None, :]) <= 10.0 / 255.0, axis=-1))
    )

    if lum.shape[0] >= 3 and lum.shape[1] >= 3:
        lap = (
            lum[:-2, 1:-1] + lum[2:, 1:-1] + lum[1:-1, :-2] + lum[1:-1, 2:]
            - 4.0 * lum[1:-1, 1:-1]
        )
        laplacian_variance = float(np.var(lap))
        gx = (lum[1:-1, 2:] - lum[1:-1, :-2]) / 2.0
        gy = (lum[2:, 1:-1] - lum[:-2, 1:-1]) / 2.0
        mean_gradient = float(np.mean(np.hypot(gx, gy)))
    else:
        laplacian_variance = 0.0
        mean_gradient = 0.0

    lum_var = float(np.var(lum))
    smooth = uniform_filter(lum, size=4, mode="nearest")
    hf_energy_ratio = float(np.var(lum - smooth) / (lum_var + 1e-8))

    # hue histogram over chromatic pixels, normalized by total pixel count
    chromatic = saturation > 0.05
    hue_bins = np.zeros(8)
    if chromatic.any():
        rc, gc, bc = r[chromatic], g[chromatic], b[chromatic]
        mx = cmax[chromatic]
        d = delta[chromatic]
        hue = np.zeros_like(mx)
        sel = (mx == rc) & (d > 0)
        hue[sel] = ((gc[sel] - bc[sel]) / d[sel]) % 6.0
        sel = (mx == gc) & (d > 0) & (mx != rc)
        hue[sel] = (bc[sel] - rc[sel]) / d[sel] + 2.0
        sel = (mx == bc) & (d > 0) & (mx != rc) & (mx != gc)
        hue[sel] = (rc[sel] - gc[sel]) / d[sel] + 4.0
        hue /= 6.0
        idx = np.clip((hue * 8).astype(int), 0, 7)
        hue_bins = np.bincount(idx, minlength=8).astype(np.float64) / lum.size

    return np.array(
        [
            float(r.mean()), float(g.mean()), float(b.mean()),
            float(r.std()), float(g.std()), float(b.std()),
            float(saturation.mean()),
            float(lum.mean()),
            white_fraction,
            dark_fraction,
            green_fill_fraction,
            laplacian_variance,
            mean_gradient,
            hf_energy_ratio,
            *hue_bins,
            _autocorr_peak(lum.mean(axis=1)),
            _autocorr_peak(lum.mean(axis=0)),
        ]
    )
