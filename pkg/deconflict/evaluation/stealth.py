"""stealth module: Perceptual similarity of poisoned and clean images.

Functions
---------
ssim(img_a, img_b)
    Mean local structural similarity over 8x8 windows, stride 4.
perceptual_distance(proxy, img_a, img_b, normalize)
    Distance between proxy features, relative to the first image's feature.
"""

# Third-party imports
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Local imports
from deconflict.core.tensor import as_tensor, norm
from deconflict.exceptions import DimensionError
from deconflict.models.ProxyEncoder import forward_proxy

WINDOW = 8
STRIDE = 4
C1 = 0.01 ** 2
C2 = 0.03 ** 2

def _windows(channel, window):
    view = sliding_window_view(channel, (window, window))[::STRIDE, ::STRIDE]
    return view.reshape(view.shape[0], view.shape[1], -1)

def ssim(img_a, img_b):
    """Return the mean SSIM of two (H, W, C) images with dynamic range 1.

    Local statistics use uniform 8x8 windows placed every 4 pixels (a single
    whole-image window when the image is smaller); the map is averaged over
    windows and then over channels.
    """

    a = as_tensor(img_a)
    b = as_tensor(img_b)
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shape {a.shape} does not match {b.shape}")
    if a.ndim == 2:
        a = a[:, :, np.newaxis]
        b = b[:, :, np.newaxis]
    window = min(WINDOW, a.shape[0], a.shape[1])
    scores = []
    for c in range(a.shape[2]):
        wa = _windows(a[:, :, c], window)
        wb = _windows(b[:, :, c], window)
        mu_a = wa.mean(axis=-1)
        mu_b = wb.mean(axis=-1)
        var_a = (wa * wa).mean(axis=-1) - mu_a * mu_a
        var_b = (wb * wb).mean(axis=-1) - mu_b * mu_b
        cov = (wa * wb).mean(axis=-1) - mu_a * mu_b
        ssim_map = ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) / \
            ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2))
        scores.append(ssim_map.mean())
    return float(np.mean(scores))

def perceptual_distance(proxy, img_a, img_b, normalize=True):
    """Return |f(a) - f(b)| / |f(a)| for the proxy feature map f.

    The raw distance is returned when normalize is False or f(a) is zero.
    """

    fa = forward_proxy(proxy, img_a)
    fb = forward_proxy(proxy, img_b)
    distance = norm(fa - fb)
    scale = norm(fa)
    if not normalize or scale == 0.0:
        return distance
    return distance / scale
