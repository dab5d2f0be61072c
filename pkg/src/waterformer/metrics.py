"""Full-reference (SSIM, PSNR, NRMSE) and no-reference (UCIQE, UIQM) metrics.

Everything operates on (h, w, 3) float arrays in [0, 1]; 8-bit inputs are
normalized at ingestion. PSNR of identical images is reported as +inf.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage import color as skcolor

from .color_space import luma
from .errors import DimensionError, DomainError

# Weights of the chroma-spread / luminance-contrast / saturation terms and
# of the colorfulness / sharpness / contrast terms, from the metrics'
# original publications. Treated as configuration.
UCIQE_COEFFS = (0.4680, 0.2745, 0.2576)
UIQM_COEFFS = (0.0282, 0.2953, 3.5753)
UICM_COEFFS = (-0.0268, 0.1586)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(gt, pred):
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise DimensionError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    return gt, pred


def psnr(gt, pred):
    """10*log10(1/MSE) for unit-range images; +inf for identical pairs."""
    gt, pred = _check_pair(gt, pred)
    mse = np.mean((gt - pred) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def nrmse(gt, pred, normalization="frobenius"):
    """Root-mean-square error normalized by the reference.

    frobenius: ||pred - gt|| / ||gt||; minmax: RMSE / (max - min of gt).
    """
    gt, pred = _check_pair(gt, pred)
    if normalization == "frobenius":
        denom = np.sqrt(np.sum(gt ** 2))
        if denom == 0.0:
            raise DomainError("nrmse undefined for an all-zero reference")
        return float(np.sqrt(np.sum((pred - gt) ** 2)) / denom)
    if normalization == "minmax":
        denom = gt.max() - gt.min()
        if denom == 0.0:
            raise DomainError("nrmse min-max normalization undefined for constant reference")
        return float(np.sqrt(np.mean((pred - gt) ** 2)) / denom)
    raise ValueError(f"unknown normalization {normalization!r}")


def _gaussian_window(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _valid_gaussian_filter(img, window, sigma):
    g = _gaussian_window(window, sigma)
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    r = window // 2
    return out[r:-r, r:-r]


def _ssim_plane(x, y):
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_x = _valid_gaussian_filter(x, SSIM_WINDOW, SSIM_SIGMA)
    mu_y = _valid_gaussian_filter(y, SSIM_WINDOW, SSIM_SIGMA)
    var_x = _valid_gaussian_filter(x * x, SSIM_WINDOW, SSIM_SIGMA) - mu_x ** 2
    var_y = _valid_gaussian_filter(y * y, SSIM_WINDOW, SSIM_SIGMA) - mu_y ** 2
    cov = _valid_gaussian_filter(x * y, SSIM_WINDOW, SSIM_SIGMA) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(gt, pred, per_channel=False):
    """Single-scale SSIM with an 11x11 Gaussian window, sigma 1.5.

    Computed on the luma plane by default; per_channel=True averages the
    per-channel scores instead.
    """
    gt, pred = _check_pair(gt, pred)
    if gt.shape[0] < SSIM_WINDOW or gt.shape[1] < SSIM_WINDOW:
        raise DimensionError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    if per_channel:
        return float(np.mean([_ssim_plane(gt[..., c], pred[..., c]) for c in range(3)]))
    return _ssim_plane(luma(gt), luma(pred))


# --- no-reference metrics ---------------------------------------------------

def uciqe(img):
    """Chroma spread + luminance contrast + mean saturation in CIELab.

    Lab is rescaled (L/100, a/128, b/128) so scores land in the familiar
    0 to ~0.7 range of the underwater-enhancement literature.
    """
    img = np.asarray(img, dtype=np.float64)
    lab = skcolor.rgb2lab(img)
    lum = lab[..., 0] / 100.0
    chroma = np.sqrt((lab[..., 1] / 128.0) ** 2 + (lab[..., 2] / 128.0) ** 2)

    sigma_c = float(np.std(chroma))

    flat = np.sort(lum.flatten())
    top = max(1, int(round(0.01 * flat.size)))
    contrast = float(np.mean(flat[-top:]) - np.mean(flat[:top]))

    saturation = np.where(lum > 1e-8, chroma / np.maximum(lum, 1e-8), 0.0)
    mu_s = float(np.mean(saturation))

    c1, c2, c3 = UCIQE_COEFFS
    return c1 * sigma_c + c2 * contrast + c3 * mu_s


def _alpha_trimmed(values, alpha=0.1):
    v = np.sort(values.flatten())
    k = v.size
    lo = int(math.ceil(alpha * k))
    hi = int(math.floor(alpha * k))
    trimmed = v[lo:k - hi] if k - hi > lo else v
    mu = float(np.mean(trimmed))
    sigma2 = float(np.mean((trimmed - mu) ** 2))
    return mu, sigma2


def _uicm(img255):
    rg = img255[..., 0] - img255[..., 1]
    yb = (img255[..., 0] + img255[..., 1]) / 2.0 - img255[..., 2]
    mu_rg, s2_rg = _alpha_trimmed(rg)
    mu_yb, s2_yb = _alpha_trimmed(yb)
    a, b = UICM_COEFFS
    return a * math.hypot(mu_rg, mu_yb) + b * math.sqrt(s2_rg + s2_yb)


def _block_iter(plane, blocksize):
    nx = math.ceil(plane.shape[0] / blocksize)
    ny = math.ceil(plane.shape[1] / blocksize)
    for i in range(nx):
        for j in range(ny):
            yield nx * ny, plane[i * blocksize:(i + 1) * blocksize,
                                 j * blocksize:(j + 1) * blocksize]


def _eme(plane, blocksize=8):
    total = 0.0
    for count, block in _block_iter(plane, blocksize):
        lo, hi = float(block.min()), float(block.max())
        lo = lo if lo > 0 else 1.0
        hi = hi if hi > 0 else 1.0
        total += (2.0 / count) * math.log(hi / lo)
    return total


def _sobel_magnitude(plane):
    gx = ndimage.sobel(plane, axis=1, mode="reflect")
    gy = ndimage.sobel(plane, axis=0, mode="reflect")
    return np.hypot(gx, gy)


def _uism(img255):
    weights = (0.299, 0.587, 0.114)
    total = 0.0
    for c, w in enumerate(weights):
        plane = img255[..., c]
        enhanced = plane * _sobel_magnitude(plane)
        total += w * _eme(enhanced, blocksize=8)
    return total


def _uiconm(img255, blocksize=16, gamma=1026.0):
    # Parameterized logarithmic image processing entropy of block contrast.
    gray = img255 @ np.array([0.299, 0.587, 0.114])
    s = 0.0
    for count, block in _block_iter(gray, blocksize):
        lo, hi = float(block.min()), float(block.max())
        top = gamma * (hi - lo) / (gamma - lo)
        bottom = hi + lo - hi * lo / gamma
        m = top / bottom if bottom != 0.0 else 0.0
        if m > 0.0:
            s += m * math.log(m)
    w = 1.0 / count if gray.size else 0.0
    return gamma - gamma * (1.0 - s / gamma) ** w


def uiqm(img):
    """Colorfulness + sharpness + contrast combination on the 0..255 scale."""
    img255 = np.asarray(img, dtype=np.float64) * 255.0
    p1, p2, p3 = UIQM_COEFFS
    return p1 * _uicm(img255) + p2 * _uism(img255) + p3 * _uiconm(img255)


# --- report assembly --------------------------------------------------------

METRIC_COLUMNS = ("ssim", "psnr", "nrmse", "uciqe", "uiqm")


@dataclass
class MetricReport:
    per_image: list = field(default_factory=list)  # dicts: id + metric columns

    def add(self, image_id, **values):
        row = {"id": image_id}
        row.update({k: values.get(k) for k in METRIC_COLUMNS})
        self.per_image.append(row)

    def aggregate(self):
        out = {}
        for key in METRIC_COLUMNS:
            values = [r[key] for r in self.per_image if r[key] is not None]
            if values:
                out[key] = sum(values) / len(values)
        out["count"] = len(self.per_image)
        return out

    def to_csv(self):
        lines = ["id," + ",".join(METRIC_COLUMNS)]
        for row in self.per_image:
            cells = [str(row["id"])]
            for key in METRIC_COLUMNS:
                v = row[key]
                cells.append("" if v is None else f"{v:.6f}" if math.isfinite(v) else "inf")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def summary(self):
        agg = self.aggregate()
        parts = [f"{k}={agg[k]:.4f}" if math.isfinite(agg[k]) else f"{k}=inf"
                 for k in METRIC_COLUMNS if k in agg]
        return f"{agg['count']} images: " + ", ".join(parts)


def evaluate_pair(image_id, pred, ref=None, no_reference=True,
                  nrmse_normalization="frobenius"):
    """Metric row for one image: full-reference scores when ref is given,
    plus the no-reference scores unless disabled."""
    values = {}
    if ref is not None:
        values["ssim"] = ssim(ref, pred)
        values["psnr"] = psnr(ref, pred)
        values["nrmse"] = nrmse(ref, pred, nrmse_normalization)
    if no_reference:
        values["uciqe"] = uciqe(pred)
        values["uiqm"] = uiqm(pred)
    return {"id": image_id, **values}
