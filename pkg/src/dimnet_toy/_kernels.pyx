# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: CTC forward/backward and Levenshtein alignment.

Signatures and semantics mirror ``_pykernels`` exactly; ``kernels`` picks one
of the two at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64

cdef enum:
    OP_MATCH = 0
    OP_SUB = 1
    OP_DEL = 2
    OP_INS = 3


cdef inline f64 _lse2(f64 a, f64 b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log(1.0 + exp(b - a))
    return b + log(1.0 + exp(a - b))


cdef i64[::1] _extend(i64[::1] labels, i64 blank):
    cdef Py_ssize_t L = labels.shape[0], i
    out = np.full(2 * L + 1, blank, dtype=np.int64)
    cdef i64[::1] ext = out
    for i in range(L):
        ext[2 * i + 1] = labels[i]
    return ext


cdef f64 _forward(const f64[:, ::1] lp, i64[::1] ext, i64 blank, f64[:, ::1] alpha) nogil:
    cdef Py_ssize_t T = lp.shape[0], S = ext.shape[0], t, s
    cdef f64 a
    for t in range(T):
        for s in range(S):
            alpha[t, s] = -INFINITY
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            a = alpha[t - 1, s]
            if s >= 1:
                a = _lse2(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = _lse2(a, alpha[t - 1, s - 2])
            if a != -INFINITY:
                alpha[t, s] = a + lp[t, ext[s]]
    if S > 1:
        return _lse2(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    return alpha[T - 1, 0]


def ctc_logprob(const f64[:, ::1] log_probs, i64[::1] labels, i64 blank):
    """log P(labels | log_probs) by the forward recursion; -inf when infeasible."""
    cdef Py_ssize_t T = log_probs.shape[0]
    if T == 0:
        return 0.0 if labels.shape[0] == 0 else -INFINITY
    cdef i64[::1] ext = _extend(labels, blank)
    alpha = np.empty((T, ext.shape[0]), dtype=np.float64)
    cdef f64[:, ::1] av = alpha
    cdef f64 res
    with nogil:
        res = _forward(log_probs, ext, blank, av)
    return res


def ctc_forward_backward(const f64[:, ::1] log_probs, i64[::1] labels, i64 blank):
    """Return (log P, d(-log P)/d log_probs).

    The gradient is taken w.r.t. the raw per-frame scores, so normalisation of
    ``log_probs`` is the caller's business. Infeasible labels give (-inf, 0).
    """
    cdef Py_ssize_t T = log_probs.shape[0], V = log_probs.shape[1]
    cdef i64[::1] ext = _extend(labels, blank)
    cdef Py_ssize_t S = ext.shape[0], t, s
    grad = np.zeros((T, V), dtype=np.float64)
    if T == 0:
        return (0.0 if labels.shape[0] == 0 else -INFINITY), grad
    alpha = np.empty((T, S), dtype=np.float64)
    beta = np.empty((T, S), dtype=np.float64)
    occ = np.empty((T, V), dtype=np.float64)
    cdef f64[:, ::1] av = alpha, bv = beta, gv = grad, ov = occ
    cdef f64 logp, b
    with nogil:
        logp = _forward(log_probs, ext, blank, av)
    if logp == -INFINITY:
        return logp, grad
    with nogil:
        # beta excludes the emission at t itself
        for t in range(T):
            for s in range(S):
                bv[t, s] = -INFINITY
        bv[T - 1, S - 1] = 0.0
        if S > 1:
            bv[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(S):
                b = bv[t + 1, s] + log_probs[t + 1, ext[s]]
                if s + 1 < S:
                    b = _lse2(b, bv[t + 1, s + 1] + log_probs[t + 1, ext[s + 1]])
                if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                    b = _lse2(b, bv[t + 1, s + 2] + log_probs[t + 1, ext[s + 2]])
                bv[t, s] = b
        for t in range(T):
            for s in range(V):
                ov[t, s] = -INFINITY
            for s in range(S):
                ov[t, ext[s]] = _lse2(ov[t, ext[s]], av[t, s] + bv[t, s])
            for s in range(V):
                if ov[t, s] != -INFINITY:
                    gv[t, s] = -exp(ov[t, s] - logp)
    return logp, grad


def edit_align(i64[::1] ref, i64[::1] hyp):
    """Unit-cost Levenshtein alignment.

    Returns an (n_ops, 3) int64 array of (op, ref_index, hyp_index) in forward
    order; absent indices are -1. Among minimum-edit alignments the one with
    the fewest insertions plus deletions wins, which makes the substitution
    count symmetric under swapping ref and hyp; remaining ties prefer
    diagonal, then deletion, then insertion.
    """
    cdef Py_ssize_t n = ref.shape[0], m = hyp.shape[0], i, j, k
    # cost key = edits * W + indels, so one integer orders both criteria
    cdef i64 W = n + m + 1
    dist = np.empty((n + 1, m + 1), dtype=np.int64)
    cdef i64[:, ::1] d = dist
    cdef i64 best, c
    with nogil:
        for i in range(n + 1):
            d[i, 0] = i * (W + 1)
        for j in range(m + 1):
            d[0, j] = j * (W + 1)
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                best = d[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else W)
                c = d[i - 1, j] + W + 1
                if c < best:
                    best = c
                c = d[i, j - 1] + W + 1
                if c < best:
                    best = c
                d[i, j] = best
    out = np.empty((n + m, 3), dtype=np.int64)
    cdef i64[:, ::1] ov = out
    k = 0
    i = n
    j = m
    with nogil:
        while i > 0 or j > 0:
            if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else W):
                ov[k, 0] = OP_MATCH if ref[i - 1] == hyp[j - 1] else OP_SUB
                ov[k, 1] = i - 1
                ov[k, 2] = j - 1
                i -= 1
                j -= 1
            elif i > 0 and d[i, j] == d[i - 1, j] + W + 1:
                ov[k, 0] = OP_DEL
                ov[k, 1] = i - 1
                ov[k, 2] = -1
                i -= 1
            else:
                ov[k, 0] = OP_INS
                ov[k, 1] = -1
                ov[k, 2] = j - 1
                j -= 1
            k += 1
    return np.ascontiguousarray(out[:k][::-1])
