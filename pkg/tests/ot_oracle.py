"""Closed-form and histogram checks for optimal-transport maps."""
import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.ndimage import map_coordinates


def monotone_rearrangement(row_density):
    """Map x -> T(x) pushing uniform mass on [-0.5, W-0.5] onto the piecewise
    linear density through the pixel centres of ``row_density``."""
    w = len(row_density)
    xf = np.linspace(-0.5, w - 0.5, 100 * w + 1)
    dens = np.interp(xf, np.arange(w), row_density)
    cdf = cumulative_trapezoid(dens, xf, initial=0)
    cdf /= cdf[-1]
    return np.interp((np.arange(w) + 0.5) / w, cdf, xf)


def pushforward_l1(tx, ty, target, block=8, sub=4):
    """L1 distance between the histogram of uniformly spread samples mapped
    through (tx, ty) and the target mass, both on ``block``-pixel bins."""
    h, w = target.shape
    o = (np.arange(sub) + 0.5) / sub - 0.5
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    sx = np.clip((xx[..., None, None] + o[None, None, None, :]).ravel(), 0, w - 1)
    sy = np.clip((yy[..., None, None] + o[None, None, :, None]).ravel(), 0, h - 1)
    mx = map_coordinates(tx, [sy, sx], order=1)
    my = map_coordinates(ty, [sy, sx], order=1)
    hist, _, _ = np.histogram2d(my, mx, bins=[h // block, w // block],
                                range=[[-0.5, h - 0.5], [-0.5, w - 0.5]])
    hist /= hist.sum()
    tg = target.reshape(h // block, block, w // block, block).sum(axis=(1, 3))
    tg = tg / tg.sum()
    return float(np.abs(hist - tg).sum())
