"""Independent reference implementations used only by tests."""
import numpy as np
from scipy.ndimage import map_coordinates


def raymarch_project(volume, angle_deg, step=0.25):
    """Line integrals through a zero-extended bilinear interpolant.

    Each detector ray is sampled every ``step`` voxels over a length that
    covers the whole slice; returns an ``H x W`` image (no negation).
    """
    D, H, W = volume.shape
    th = np.deg2rad(angle_deg)
    c, s = np.cos(th), np.sin(th)
    cx, cz = (W - 1) / 2, (D - 1) / 2
    half = np.hypot(D + 2, W + 2) / 2 + 1
    t = np.arange(-half, half + step / 2, step)
    out = np.zeros((H, W))
    for y in range(H):
        sl = volume[:, y, :].astype(np.float64)
        for u in range(W):
            x = cx + (u - cx) * c + t * s
            z = cz - (u - cx) * s + t * c
            vals = map_coordinates(sl, [z, x], order=1, mode="grid-constant", cval=0.0)
            out[y, u] = vals.sum() * step
    return out


def direct_conv3x3(x, k, b):
    """Naive zero-padded 3x3 cross-correlation: x (C,H,W), k (O,C,3,3)."""
    C, H, W = x.shape
    O = k.shape[0]
    xp = np.zeros((C, H + 2, W + 2))
    xp[:, 1:-1, 1:-1] = x
    out = np.zeros((O, H, W))
    for o in range(O):
        for i in range(H):
            for j in range(W):
                acc = b[o]
                for c in range(C):
                    for a in range(3):
                        for d in range(3):
                            acc += k[o, c, a, d] * xp[c, i + a, j + d]
                out[o, i, j] = acc
    return out


def direct_idft2(spectrum_centred):
    """Inverse 2-D DFT of a DC-centred spectrum by explicit summation."""
    h, w = spectrum_centred.shape
    ky = np.arange(h) - h // 2
    kx = np.arange(w) - w // 2
    y = np.arange(h)
    x = np.arange(w)
    Ey = np.exp(2j * np.pi * np.outer(y, ky) / h)
    Ex = np.exp(2j * np.pi * np.outer(kx, x) / w)
    return (Ey @ spectrum_centred @ Ex) / (h * w)
