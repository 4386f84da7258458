"""Pure numpy versions of the per-pixel kernels.

These mirror ``_ckernels.pyx`` one to one and are used when the compiled
extension is unavailable (or when ``BPFIDELITY_PURE_PYTHON=1``).
All differences are circular: the last row/column wraps to the first.
"""
import numpy as np

_SQRT1_2 = np.sqrt(0.5)


def grad2d(x):
    """Forward differences along rows and columns with circular wrap."""
    gx = np.roll(x, -1, axis=0) - x
    gy = np.roll(x, -1, axis=1) - x
    return gx, gy


def grad2d_adjoint(px, py):
    """Adjoint of :func:`grad2d` (the negative divergence)."""
    return (np.roll(px, 1, axis=0) - px) + (np.roll(py, 1, axis=1) - py)


def tv_norm(x):
    """Sum over pixels of the Euclidean norm of the circular gradient."""
    gx, gy = grad2d(x)
    return float(np.sqrt(gx * gx + gy * gy).sum())


def sb_shrink_update(x, dx, dy, bx, by, thr):
    """One split-Bregman auxiliary update, in place.

    Sets ``d = shrink(grad(x) + b, thr)`` (isotropic), then
    ``b += grad(x) - d``, and returns ``grad^T (d - b)`` which is the
    right-hand-side contribution for the next x-subproblem.
    """
    gx, gy = grad2d(x)
    sx = gx + bx
    sy = gy + by
    mag = np.sqrt(sx * sx + sy * sy)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(mag > thr, (mag - thr) / mag, 0.0)
    dx[...] = scale * sx
    dy[...] = scale * sy
    bx[...] = sx - dx
    by[...] = sy - dy
    return grad2d_adjoint(dx - bx, dy - by)


def _haar_levels(h, w):
    levels = 0
    while h % 2 == 0 and w % 2 == 0 and h > 1 and w > 1:
        h //= 2
        w //= 2
        levels += 1
    return levels


def haar_forward(img, levels=None):
    """Orthonormal multi-level 2D Haar analysis (Mallat layout)."""
    out = np.array(img, dtype=np.float64, copy=True)
    h, w = out.shape
    if levels is None:
        levels = _haar_levels(h, w)
    for _ in range(levels):
        blk = out[:h, :w]
        a = (blk[:, 0::2] + blk[:, 1::2]) * _SQRT1_2
        d = (blk[:, 0::2] - blk[:, 1::2]) * _SQRT1_2
        blk = np.concatenate([a, d], axis=1)
        a = (blk[0::2, :] + blk[1::2, :]) * _SQRT1_2
        d = (blk[0::2, :] - blk[1::2, :]) * _SQRT1_2
        out[:h, :w] = np.concatenate([a, d], axis=0)
        h //= 2
        w //= 2
    return out


def haar_inverse(coef, levels=None):
    """Inverse of :func:`haar_forward`."""
    out = np.array(coef, dtype=np.float64, copy=True)
    H, W = out.shape
    if levels is None:
        levels = _haar_levels(H, W)
    for lev in reversed(range(levels)):
        h, w = H >> lev, W >> lev
        blk = out[:h, :w].copy()
        a, d = blk[: h // 2, :], blk[h // 2 :, :]
        tmp = np.empty_like(blk)
        tmp[0::2, :] = (a + d) * _SQRT1_2
        tmp[1::2, :] = (a - d) * _SQRT1_2
        a, d = tmp[:, : w // 2], tmp[:, w // 2 :]
        blk[:, 0::2] = (a + d) * _SQRT1_2
        blk[:, 1::2] = (a - d) * _SQRT1_2
        out[:h, :w] = blk
    return out
