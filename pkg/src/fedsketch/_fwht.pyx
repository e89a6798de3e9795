# cython: boundscheck=False, wraparound=False, cdivision=True
# In-place orthonormal fast Walsh-Hadamard transform, float32.
# Butterfly order (h = 1, 2, 4, ...) and the final 1/sqrt(d) scaling match
# the numpy fallback in fedsketch.hadamard bit for bit.

from libc.math cimport sqrt


def fwht_inplace(float[::1] v):
    cdef Py_ssize_t d = v.shape[0]
    cdef Py_ssize_t h = 1, i, j
    cdef float x, y, s
    if d & (d - 1):
        raise ValueError(f"length must be a power of two, got {d}")
    while h < d:
        for i in range(0, d, 2 * h):
            for j in range(i, i + h):
                x = v[j]
                y = v[j + h]
                v[j] = x + y
                v[j + h] = x - y
        h *= 2
    s = <float>(1.0 / sqrt(<double>d))
    for i in range(d):
        v[i] *= s
