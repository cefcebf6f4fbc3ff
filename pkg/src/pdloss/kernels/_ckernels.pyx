# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pair/ranking kernels; see _pykernels for the contracts."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def pair_indices(labels):
    cdef const long long[::1] y = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = y.shape[0], i, j, g = 0, m = 0
    cdef Py_ssize_t total = n * (n - 1) // 2
    cdef Py_ssize_t ngen = 0
    for i in range(n):
        for j in range(i + 1, n):
            if y[i] == y[j]:
                ngen += 1
    gen_arr = np.empty(ngen, dtype=np.int64)
    imp_arr = np.empty(total - ngen, dtype=np.int64)
    cdef long long[::1] gen = gen_arr
    cdef long long[::1] imp = imp_arr
    for i in range(n):
        for j in range(i + 1, n):
            if y[i] == y[j]:
                gen[g] = i * n + j
                g += 1
            else:
                imp[m] = i * n + j
                m += 1
    return gen_arr, imp_arr


def pair_partition(S, labels):
    cdef const double[:, ::1] s = np.ascontiguousarray(S, dtype=np.float64)
    cdef const long long[::1] y = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = y.shape[0], i, j, g = 0, m = 0
    cdef Py_ssize_t ngen = 0
    for i in range(n):
        for j in range(i + 1, n):
            if y[i] == y[j]:
                ngen += 1
    gen_arr = np.empty(ngen, dtype=np.float64)
    imp_arr = np.empty(n * (n - 1) // 2 - ngen, dtype=np.float64)
    cdef double[::1] gen = gen_arr
    cdef double[::1] imp = imp_arr
    for i in range(n):
        for j in range(i + 1, n):
            if y[i] == y[j]:
                gen[g] = s[i, j]
                g += 1
            else:
                imp[m] = s[i, j]
                m += 1
    return gen_arr, imp_arr


def first_hit_ranks(D, labels):
    cdef const double[:, ::1] d = np.ascontiguousarray(D, dtype=np.float64)
    cdef const long long[::1] y = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = y.shape[0], i, j, best
    cdef double dbest
    cdef long long rank
    out_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] out = out_arr
    for i in range(n):
        best = -1
        dbest = 0.0
        for j in range(n):
            if j == i or y[j] != y[i]:
                continue
            if best < 0 or d[i, j] < dbest:
                best = j
                dbest = d[i, j]
        if best < 0:
            out[i] = -1
            continue
        rank = 0
        for j in range(n):
            if j == i:
                continue
            if d[i, j] < dbest or (d[i, j] == dbest and j < best):
                rank += 1
        out[i] = rank
    return out_arr


def histogram_counts(scores, edges):
    cdef const double[::1] x = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const double[::1] e = np.ascontiguousarray(edges, dtype=np.float64)
    cdef Py_ssize_t nb = e.shape[0] - 1, i, k
    cdef double lo = e[0], hi = e[nb], v
    out_arr = np.zeros(nb, dtype=np.int64)
    cdef long long[::1] out = out_arr
    for i in range(x.shape[0]):
        v = x[i]
        if v < lo:
            k = 0
        elif v >= hi:
            k = nb - 1
        else:
            k = <Py_ssize_t>((v - lo) / (hi - lo) * nb)
            if k > nb - 1:
                k = nb - 1
            # settle rounding against the explicit edges
            while k > 0 and v < e[k]:
                k -= 1
            while k < nb - 1 and v >= e[k + 1]:
                k += 1
        out[k] += 1
    return out_arr


def triplet_indices(labels):
    cdef const long long[::1] y = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t B = y.shape[0], a, p, q, t = 0, count = 0
    for a in range(B):
        for p in range(B):
            if p == a or y[p] != y[a]:
                continue
            for q in range(B):
                if y[q] != y[a]:
                    count += 1
    ap_arr = np.empty(count, dtype=np.int64)
    an_arr = np.empty(count, dtype=np.int64)
    cdef long long[::1] ap = ap_arr
    cdef long long[::1] an = an_arr
    for a in range(B):
        for p in range(B):
            if p == a or y[p] != y[a]:
                continue
            for q in range(B):
                if y[q] != y[a]:
                    ap[t] = a * B + p
                    an[t] = a * B + q
                    t += 1
    return ap_arr, an_arr
