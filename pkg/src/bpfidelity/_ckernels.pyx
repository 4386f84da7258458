# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel kernels (TV and Haar).

Same contracts as ``_kernels_py``; see that module for the semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef double SQRT1_2 = 0.70710678118654752440


def grad2d(double[:, ::1] x):
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], i, j, ip, jp
    gx_arr = np.empty((h, w))
    gy_arr = np.empty((h, w))
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gy = gy_arr
    with nogil:
        for i in range(h):
            ip = i + 1 if i + 1 < h else 0
            for j in range(w):
                jp = j + 1 if j + 1 < w else 0
                gx[i, j] = x[ip, j] - x[i, j]
                gy[i, j] = x[i, jp] - x[i, j]
    return gx_arr, gy_arr


def grad2d_adjoint(double[:, ::1] px, double[:, ::1] py):
    cdef Py_ssize_t h = px.shape[0], w = px.shape[1], i, j, im, jm
    out_arr = np.empty((h, w))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(h):
            im = i - 1 if i > 0 else h - 1
            for j in range(w):
                jm = j - 1 if j > 0 else w - 1
                out[i, j] = (px[im, j] - px[i, j]) + (py[i, jm] - py[i, j])
    return out_arr


def tv_norm(double[:, ::1] x):
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], i, j, ip, jp
    cdef double gx, gy, acc = 0.0
    with nogil:
        for i in range(h):
            ip = i + 1 if i + 1 < h else 0
            for j in range(w):
                jp = j + 1 if j + 1 < w else 0
                gx = x[ip, j] - x[i, j]
                gy = x[i, jp] - x[i, j]
                acc += sqrt(gx * gx + gy * gy)
    return acc


def sb_shrink_update(double[:, ::1] x, double[:, ::1] dx, double[:, ::1] dy,
                     double[:, ::1] bx, double[:, ::1] by, double thr):
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], i, j, ip, jp, im, jm
    cdef double sx, sy, mag, scale
    out_arr = np.empty((h, w))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(h):
            ip = i + 1 if i + 1 < h else 0
            for j in range(w):
                jp = j + 1 if j + 1 < w else 0
                sx = x[ip, j] - x[i, j] + bx[i, j]
                sy = x[i, jp] - x[i, j] + by[i, j]
                mag = sqrt(sx * sx + sy * sy)
                if mag > thr:
                    scale = (mag - thr) / mag
                else:
                    scale = 0.0
                dx[i, j] = scale * sx
                dy[i, j] = scale * sy
                bx[i, j] = sx - dx[i, j]
                by[i, j] = sy - dy[i, j]
        # second pass: grad^T (d - b); needs neighbours already updated
        for i in range(h):
            im = i - 1 if i > 0 else h - 1
            for j in range(w):
                jm = j - 1 if j > 0 else w - 1
                out[i, j] = ((dx[im, j] - bx[im, j]) - (dx[i, j] - bx[i, j])
                             + (dy[i, jm] - by[i, jm]) - (dy[i, j] - by[i, j]))
    return out_arr


def _haar_levels(Py_ssize_t h, Py_ssize_t w):
    cdef int levels = 0
    while h % 2 == 0 and w % 2 == 0 and h > 1 and w > 1:
        h //= 2
        w //= 2
        levels += 1
    return levels


def haar_forward(img, levels=None):
    out_arr = np.array(img, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t H = out.shape[0], W = out.shape[1]
    cdef Py_ssize_t h = H, w = W, i, j, hh, hw
    cdef int lev, nlev
    nlev = _haar_levels(H, W) if levels is None else int(levels)
    tmp_arr = np.empty((H, W))
    cdef double[:, ::1] tmp = tmp_arr
    cdef double a, b
    with nogil:
        for lev in range(nlev):
            hh = h // 2
            hw = w // 2
            for i in range(h):
                for j in range(hw):
                    a = out[i, 2 * j]
                    b = out[i, 2 * j + 1]
                    tmp[i, j] = (a + b) * SQRT1_2
                    tmp[i, hw + j] = (a - b) * SQRT1_2
            for i in range(hh):
                for j in range(w):
                    a = tmp[2 * i, j]
                    b = tmp[2 * i + 1, j]
                    out[i, j] = (a + b) * SQRT1_2
                    out[hh + i, j] = (a - b) * SQRT1_2
            h = hh
            w = hw
    return out_arr


def haar_inverse(coef, levels=None):
    out_arr = np.array(coef, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t H = out.shape[0], W = out.shape[1]
    cdef Py_ssize_t h, w, i, j, hh, hw
    cdef int lev, nlev
    nlev = _haar_levels(H, W) if levels is None else int(levels)
    tmp_arr = np.empty((H, W))
    cdef double[:, ::1] tmp = tmp_arr
    cdef double a, d
    with nogil:
        for lev in range(nlev - 1, -1, -1):
            h = H >> lev
            w = W >> lev
            hh = h // 2
            hw = w // 2
            for i in range(hh):
                for j in range(w):
                    a = out[i, j]
                    d = out[hh + i, j]
                    tmp[2 * i, j] = (a + d) * SQRT1_2
                    tmp[2 * i + 1, j] = (a - d) * SQRT1_2
            for i in range(h):
                for j in range(hw):
                    a = tmp[i, j]
                    d = tmp[i, hw + j]
                    out[i, 2 * j] = (a + d) * SQRT1_2
                    out[i, 2 * j + 1] = (a - d) * SQRT1_2
    return out_arr
