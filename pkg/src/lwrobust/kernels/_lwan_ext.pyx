# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled label-wise attention kernel; same contract as ``_lwan_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def lwan_forward(double[:, ::1] emb, double[:, ::1] K, double[:, ::1] Vm,
                 double[:, ::1] Q, double[:, ::1] o,
                 cnp.int64_t[:, ::1] tokens, cnp.int64_t[::1] lengths):
    cdef Py_ssize_t B = tokens.shape[0], Tm = tokens.shape[1]
    cdef Py_ssize_t E = emb.shape[1], k = K.shape[1], L = Q.shape[0]
    cdef Py_ssize_t b, t, l, j, i, T
    cdef double s, mx, z, acc
    logits_arr = np.zeros((B, L))
    attn_arr = np.zeros((B, L, Tm))
    cdef double[:, ::1] logits = logits_arr
    cdef double[:, :, ::1] attn = attn_arr
    cdef double[:, ::1] Kh = np.empty((Tm, k))
    cdef double[:, ::1] Vh = np.empty((Tm, k))
    cdef double[::1] dvec = np.empty(k)
    for b in range(B):
        T = lengths[b]
        for t in range(T):
            for j in range(k):
                Kh[t, j] = 0.0
                Vh[t, j] = 0.0
            for i in range(E):
                z = emb[tokens[b, t], i]
                for j in range(k):
                    Kh[t, j] += z * K[i, j]
                    Vh[t, j] += z * Vm[i, j]
        for l in range(L):
            mx = -1e308
            for t in range(T):
                s = 0.0
                for j in range(k):
                    s += Kh[t, j] * Q[l, j]
                attn[b, l, t] = s
                if s > mx:
                    mx = s
            z = 0.0
            for t in range(T):
                attn[b, l, t] = exp(attn[b, l, t] - mx)
                z += attn[b, l, t]
            for t in range(T):
                attn[b, l, t] /= z
            for j in range(k):
                dvec[j] = 0.0
            for t in range(T):
                for j in range(k):
                    dvec[j] += attn[b, l, t] * Vh[t, j]
            acc = 0.0
            for j in range(k):
                acc += dvec[j] / T * o[l, j]
            logits[b, l] = acc
    return logits_arr, attn_arr


def lwan_backward(double[:, ::1] emb, double[:, ::1] K, double[:, ::1] Vm,
                  double[:, ::1] Q, double[:, ::1] o,
                  cnp.int64_t[:, ::1] tokens, cnp.int64_t[::1] lengths,
                  double[:, :, ::1] attn, double[:, ::1] g):
    cdef Py_ssize_t B = tokens.shape[0], Tm = tokens.shape[1]
    cdef Py_ssize_t E = emb.shape[1], k = K.shape[1], L = Q.shape[0]
    cdef Py_ssize_t b, t, l, j, i, T, tok
    cdef double inv, s, dot, z, acc_k, acc_v
    d_emb_arr = np.zeros_like(np.asarray(emb))
    dK_arr = np.zeros((E, k))
    dVm_arr = np.zeros((E, k))
    dQ_arr = np.zeros((L, k))
    do_arr = np.zeros((L, k))
    cdef double[:, ::1] d_emb = d_emb_arr
    cdef double[:, ::1] dK = dK_arr
    cdef double[:, ::1] dVm = dVm_arr
    cdef double[:, ::1] dQ = dQ_arr
    cdef double[:, ::1] d_o = do_arr
    cdef double[:, ::1] Kh = np.empty((Tm, k))
    cdef double[:, ::1] Vh = np.empty((Tm, k))
    cdef double[:, ::1] dKh = np.empty((Tm, k))
    cdef double[:, ::1] dVh = np.empty((Tm, k))
    cdef double[::1] dvec = np.empty(k)
    cdef double[::1] da = np.empty(Tm)
    for b in range(B):
        T = lengths[b]
        inv = 1.0 / T
        for t in range(T):
            for j in range(k):
                Kh[t, j] = 0.0
                Vh[t, j] = 0.0
                dKh[t, j] = 0.0
                dVh[t, j] = 0.0
            for i in range(E):
                z = emb[tokens[b, t], i]
                for j in range(k):
                    Kh[t, j] += z * K[i, j]
                    Vh[t, j] += z * Vm[i, j]
        for l in range(L):
            # d_l and gradient of the output vector
            for j in range(k):
                dvec[j] = 0.0
            for t in range(T):
                for j in range(k):
                    dvec[j] += attn[b, l, t] * Vh[t, j]
            for j in range(k):
                d_o[l, j] += g[b, l] * dvec[j] * inv
            # attention weights and value path
            s = 0.0
            for t in range(T):
                dot = 0.0
                for j in range(k):
                    dot += Vh[t, j] * o[l, j]
                da[t] = g[b, l] * dot * inv
                s += attn[b, l, t] * da[t]
                for j in range(k):
                    dVh[t, j] += attn[b, l, t] * g[b, l] * o[l, j] * inv
            # softmax backward into scores
            for t in range(T):
                z = attn[b, l, t] * (da[t] - s)
                for j in range(k):
                    dKh[t, j] += z * Q[l, j]
                    dQ[l, j] += z * Kh[t, j]
        for t in range(T):
            tok = tokens[b, t]
            for i in range(E):
                z = emb[tok, i]
                acc_k = 0.0
                acc_v = 0.0
                for j in range(k):
                    dK[i, j] += z * dKh[t, j]
                    dVm[i, j] += z * dVh[t, j]
                    acc_k += dKh[t, j] * K[i, j]
                    acc_v += dVh[t, j] * Vm[i, j]
                d_emb[tok, i] += acc_k + acc_v
    return d_emb_arr, dK_arr, dVm_arr, dQ_arr, do_arr
