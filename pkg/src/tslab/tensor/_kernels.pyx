# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled convolution kernels (float64, single-threaded)."""
import numpy as np

cdef extern from "_conv.h" nogil:
    void conv_fwd(const double *xp, const double *w, double *out,
                  Py_ssize_t N, Py_ssize_t C, Py_ssize_t Tp, Py_ssize_t Hp, Py_ssize_t Wp,
                  Py_ssize_t F, Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw)
    void conv_gw(const double *xp, const double *g, double *gw,
                 Py_ssize_t N, Py_ssize_t C, Py_ssize_t Tp, Py_ssize_t Hp, Py_ssize_t Wp,
                 Py_ssize_t F, Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw)

NAME = "compiled"


def correlate(xp, w):
    """Valid stride-1 correlation of ``xp`` (N,C,T,H,W) with ``w`` (F,C,kt,kh,kw)."""
    cdef double[:, :, :, :, ::1] x = np.ascontiguousarray(xp, dtype=np.float64)
    cdef double[:, :, :, :, ::1] k = np.ascontiguousarray(w, dtype=np.float64)
    if x.shape[1] != k.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel expects {k.shape[1]}")
    out = np.empty((x.shape[0], k.shape[0], x.shape[2] - k.shape[2] + 1,
                    x.shape[3] - k.shape[3] + 1, x.shape[4] - k.shape[4] + 1), dtype=np.float64)
    cdef double[:, :, :, :, ::1] o = out
    if out.size:
        with nogil:
            conv_fwd(&x[0, 0, 0, 0, 0], &k[0, 0, 0, 0, 0], &o[0, 0, 0, 0, 0],
                     x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4],
                     k.shape[0], k.shape[2], k.shape[3], k.shape[4])
    return out


def correlate_weight_grad(xp, g, kshape):
    """Gradient of :func:`correlate` w.r.t. the kernel, given output gradient ``g``."""
    cdef double[:, :, :, :, ::1] x = np.ascontiguousarray(xp, dtype=np.float64)
    cdef double[:, :, :, :, ::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    gw = np.zeros((gg.shape[1], x.shape[1]) + tuple(kshape), dtype=np.float64)
    cdef double[:, :, :, :, ::1] o = gw
    if gg.size and gw.size:
        with nogil:
            conv_gw(&x[0, 0, 0, 0, 0], &gg[0, 0, 0, 0, 0], &o[0, 0, 0, 0, 0],
                    x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4],
                    gg.shape[1], o.shape[2], o.shape[3], o.shape[4])
    return gw
