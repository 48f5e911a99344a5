"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same results (bit-for-bit on the alignment; to rounding on
the CTC sums, which are vectorised over label states here).
"""
import numpy as np

OP_MATCH, OP_SUB, OP_DEL, OP_INS = 0, 1, 2, 3

_NEG_INF = -np.inf


def _extend(labels, blank):
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _skip_mask(ext, blank):
    # state s may be entered from s-2 when it is a label differing from s-2
    allow = np.zeros(len(ext), dtype=bool)
    if len(ext) > 2:
        allow[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return allow


def _lse(*arrays):
    stacked = np.stack(arrays)
    m = stacked.max(axis=0)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(m), safe + np.log(np.exp(stacked - safe).sum(axis=0)), _NEG_INF)


def _forward(lp, ext, blank):
    T, S = lp.shape[0], len(ext)
    allow = _skip_mask(ext, blank)
    alpha = np.full((T, S), _NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    emit = lp[:, ext]
    for t in range(1, T):
        prev = alpha[t - 1]
        s1 = np.concatenate(([_NEG_INF], prev[:-1]))
        s2 = np.concatenate(([_NEG_INF, _NEG_INF], prev[:-2]))[:S]
        s2 = np.where(allow, s2, _NEG_INF)
        alpha[t] = _lse(prev, s1, s2) + emit[t]
    if S > 1:
        logp = float(_lse(alpha[T - 1, S - 1:S], alpha[T - 1, S - 2:S - 1])[0])
    else:
        logp = float(alpha[T - 1, 0])
    return logp, alpha


def ctc_logprob(log_probs, labels, blank):
    log_probs = np.ascontiguousarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if log_probs.shape[0] == 0:
        return 0.0 if len(labels) == 0 else _NEG_INF
    return _forward(log_probs, _extend(labels, blank), blank)[0]


def ctc_forward_backward(log_probs, labels, blank):
    log_probs = np.ascontiguousarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    T, V = log_probs.shape
    grad = np.zeros((T, V))
    if T == 0:
        return (0.0 if len(labels) == 0 else _NEG_INF), grad
    ext = _extend(labels, blank)
    S = len(ext)
    logp, alpha = _forward(log_probs, ext, blank)
    if logp == _NEG_INF:
        return logp, grad
    allow = _skip_mask(ext, blank)
    emit = log_probs[:, ext]
    beta = np.full((T, S), _NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        s1 = np.concatenate((nxt[1:], [_NEG_INF]))
        s2 = np.concatenate((nxt[2:], [_NEG_INF, _NEG_INF]))[:S]
        # entering s+2 from s is allowed iff allow[s+2]
        allow_from = np.concatenate((allow[2:], [False, False]))[:S]
        s2 = np.where(allow_from, s2, _NEG_INF)
        beta[t] = _lse(nxt, s1, s2)
    joint = alpha + beta
    for k in np.unique(ext):
        cols = joint[:, ext == k]
        occ = _lse(*cols.T) if cols.shape[1] > 1 else cols[:, 0]
        with np.errstate(over="ignore"):
            grad[:, k] = np.where(np.isfinite(occ), -np.exp(occ - logp), 0.0)
    return logp, grad


def edit_align(ref, hyp):
    ref = np.asarray(ref, dtype=np.int64)
    hyp = np.asarray(hyp, dtype=np.int64)
    n, m = len(ref), len(hyp)
    # key = edits * W + indels: minimum edits first, then fewest indels
    W = n + m + 1
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1) * (W + 1)
    d[0, :] = np.arange(m + 1) * (W + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(
                d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]) * W,
                d[i - 1, j] + W + 1,
                d[i, j - 1] + W + 1,
            )
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]) * W:
            ops.append((OP_MATCH if ref[i - 1] == hyp[j - 1] else OP_SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + W + 1:
            ops.append((OP_DEL, i - 1, -1))
            i -= 1
        else:
            ops.append((OP_INS, -1, j - 1))
            j -= 1
    ops.reverse()
    return np.asarray(ops, dtype=np.int64).reshape(-1, 3)
