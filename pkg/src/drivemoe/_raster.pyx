# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled raster kernels; see ``_raster_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, fabs, INFINITY

cnp.import_array()


def segment_group_min_dist(double[:, ::1] points, double[:, ::1] segments,
                           cnp.int64_t[::1] groups, int n_groups):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = segments.shape[0]
    out_arr = np.full((n, n_groups), np.inf)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double px, py, ax, ay, abx, aby, L2, t, dx, dy, d
    cdef cnp.int64_t g
    for j in range(m):
        ax = segments[j, 0]
        ay = segments[j, 1]
        abx = segments[j, 2] - ax
        aby = segments[j, 3] - ay
        L2 = abx * abx + aby * aby
        if L2 <= 0:
            L2 = 1.0
        g = groups[j]
        for i in range(n):
            px = points[i, 0] - ax
            py = points[i, 1] - ay
            t = (px * abx + py * aby) / L2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            dx = px - t * abx
            dy = py - t * aby
            d = sqrt(dx * dx + dy * dy)
            if d < out[i, g]:
                out[i, g] = d
    return out_arr


def boxes_first_hit(double[:, ::1] points, double[:, ::1] boxes):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t k = boxes.shape[0]
    hit_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] hit = hit_arr
    cdef Py_ssize_t i, j
    cdef double dx, dy, lx, ly
    cs_arr = np.empty((k, 2))
    cdef double[:, ::1] cs = cs_arr
    for j in range(k):
        cs[j, 0] = cos(boxes[j, 2])
        cs[j, 1] = sin(boxes[j, 2])
    for i in range(n):
        for j in range(k):
            dx = points[i, 0] - boxes[j, 0]
            dy = points[i, 1] - boxes[j, 1]
            lx = dx * cs[j, 0] + dy * cs[j, 1]
            ly = -dx * cs[j, 1] + dy * cs[j, 0]
            if fabs(lx) <= boxes[j, 3] and fabs(ly) <= boxes[j, 4]:
                hit[i] = j
                break
    return hit_arr
