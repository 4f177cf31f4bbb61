# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled bit-level kernels. Mirrors ``iedpuf._kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def comparison_bits(const double[::1] values, const Py_ssize_t[::1] order):
    cdef Py_ssize_t m = order.shape[0]
    cdef Py_ssize_t i, j, k = 0
    cdef double vi
    out = np.empty(m * (m - 1), dtype=np.uint8)
    cdef unsigned char[::1] o = out
    for i in range(m):
        vi = values[order[i]]
        for j in range(m):
            if j == i:
                continue
            o[k] = 1 if vi > values[order[j]] else 0
            k += 1
    return out


def gather_partial(const unsigned char[::1] ref, const Py_ssize_t[::1] order, Py_ssize_t n):
    cdef Py_ssize_t m = order.shape[0]
    cdef Py_ssize_t i, j, a, b, k = 0
    out = np.empty(m * (m - 1), dtype=np.uint8)
    cdef unsigned char[::1] o = out
    for i in range(m):
        a = order[i]
        for j in range(m):
            if j == i:
                continue
            b = order[j]
            o[k] = ref[a * (n - 1) + (b if b < a else b - 1)]
            k += 1
    return out


def hamming_count(const unsigned char[::1] a, const unsigned char[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef long count = 0
    if b.shape[0] != n:
        raise ValueError("length mismatch")
    for i in range(n):
        count += (a[i] != b[i])
    return count


def hamming_matrix(const unsigned char[:, ::1] sigs):
    cdef Py_ssize_t k = sigs.shape[0], n = sigs.shape[1]
    cdef Py_ssize_t p, q, i
    cdef long c
    out = np.zeros((k, k), dtype=np.int64)
    cdef long long[:, ::1] o = out
    for p in range(k):
        for q in range(p + 1, k):
            c = 0
            for i in range(n):
                c += (sigs[p, i] != sigs[q, i])
            o[p, q] = c
            o[q, p] = c
    return out


def occurrence_table(const Py_ssize_t[:, ::1] seqs, Py_ssize_t n_symbols):
    cdef Py_ssize_t rows = seqs.shape[0], width = seqs.shape[1]
    cdef Py_ssize_t r, pos, s
    out = np.zeros((n_symbols, width), dtype=np.int64)
    cdef long long[:, ::1] o = out
    for r in range(rows):
        for pos in range(width):
            s = seqs[r, pos]
            if s < 0 or s >= n_symbols:
                raise ValueError(f"symbol {s} out of range")
            o[s, pos] += 1
    return out
