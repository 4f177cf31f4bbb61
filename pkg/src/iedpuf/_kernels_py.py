"""Pure-Python/numpy kernels, used when the compiled extension is unavailable."""

import numpy as np


def comparison_bits(values, order):
    v = np.asarray(values, dtype=np.float64)[np.asarray(order, dtype=np.intp)]
    m = v.shape[0]
    gt = v[:, None] > v[None, :]
    return gt[~np.eye(m, dtype=bool)].astype(np.uint8)


def gather_partial(ref, order, n):
    ref = np.asarray(ref, dtype=np.uint8)
    order = np.asarray(order, dtype=np.intp)
    m = order.shape[0]
    a = np.repeat(order, m).reshape(m, m)
    b = np.tile(order, m).reshape(m, m)
    mask = ~np.eye(m, dtype=bool)
    a, b = a[mask], b[mask]
    return ref[a * (n - 1) + np.where(b < a, b, b - 1)]


def hamming_count(a, b):
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    return int(np.count_nonzero(a != b))


def hamming_matrix(sigs):
    sigs = np.asarray(sigs, dtype=np.uint8)
    return (sigs[:, None, :] != sigs[None, :, :]).sum(axis=2, dtype=np.int64)


def occurrence_table(seqs, n_symbols):
    seqs = np.asarray(seqs, dtype=np.intp)
    if seqs.size and (seqs.min() < 0 or seqs.max() >= n_symbols):
        raise ValueError("symbol out of range")
    out = np.zeros((n_symbols, seqs.shape[1]), dtype=np.int64)
    for pos in range(seqs.shape[1]):
        out[:, pos] = np.bincount(seqs[:, pos], minlength=n_symbols)
    return out
