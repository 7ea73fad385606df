"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and return conventions; used when the extension is not built
or when ``SPARSEFIELD_PURE_PYTHON`` is set.
"""
import numpy as np

FAMILY_POWEXP = 0
FAMILY_BRIDGE = 1

# element budget for one batched (g, c, c) stack
_STACK_BUDGET = 4_000_000


def _kern_pairs(A, B, family, variance, phi, nu):
    """Kernel between matching rows of broadcastable coordinate arrays ``A``, ``B``."""
    if family == FAMILY_BRIDGE:
        s = A[..., 0]
        t = B[..., 0]
        return variance * (np.minimum(s, t) - s * t)
    dist = np.sqrt(np.sum((A - B) ** 2, axis=-1))
    return variance * np.exp(-((dist / phi) ** nu))


def cov_cross(X, Y, family, variance, phi, nu):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    return _kern_pairs(X[:, None, :], Y[None, :, :], family, variance, phi, nu)


def _factor_stack(K, jitter):
    """Batched Cholesky with the one-shot jitter retry applied per failing matrix."""
    g, c, _ = K.shape
    status = np.zeros(g, dtype=np.int8)
    try:
        return np.linalg.cholesky(K), status
    except np.linalg.LinAlgError:
        pass
    L = np.zeros_like(K)
    eye = np.eye(c)
    for q in range(g):
        try:
            L[q] = np.linalg.cholesky(K[q])
            continue
        except np.linalg.LinAlgError:
            status[q] = 1
        try:
            L[q] = np.linalg.cholesky(K[q] + jitter * eye)
        except np.linalg.LinAlgError:
            status[q] = 2
    return L, status


def vecchia_factor(nodes, cands, nbr, counts, family, variance, phi, nu, jitter):
    nodes = np.asarray(nodes, dtype=np.float64)
    cands = np.asarray(cands, dtype=np.float64)
    n, w = nbr.shape
    coeffs = np.zeros((n, w))
    condvar = np.empty(n)
    status = np.zeros(n, dtype=np.int8)
    prior = _kern_pairs(nodes, nodes, family, variance, phi, nu)
    for c in np.unique(counts):
        group = np.flatnonzero(counts == c)
        if c == 0:
            condvar[group] = prior[group]
            continue
        step = max(1, _STACK_BUDGET // (c * c))
        for lo in range(0, group.size, step):
            sel = group[lo:lo + step]
            P = cands[nbr[sel, :c]]  # (g, c, d)
            K = _kern_pairs(P[:, :, None, :], P[:, None, :, :], family, variance, phi, nu)
            kv = _kern_pairs(nodes[sel][:, None, :], P, family, variance, phi, nu)
            L, st = _factor_stack(K, jitter)
            ok = st < 2
            y = np.zeros_like(kv)
            a = np.zeros_like(kv)
            if ok.any():
                Lk = L[ok]
                y[ok] = np.linalg.solve(Lk, kv[ok][..., None])[..., 0]
                a[ok] = np.linalg.solve(np.swapaxes(Lk, 1, 2), y[ok][..., None])[..., 0]
            coeffs[sel, :c] = a
            condvar[sel] = np.where(ok, prior[sel] - np.sum(y * y, axis=1), 0.0)
            status[sel] = st
    return coeffs, condvar, status


def ancestral_sample(nbr, counts, coeffs, sd, mean, W):
    W = np.asarray(W, dtype=np.float64)
    R, r = W.shape
    Z = np.empty((R, r))
    for i in range(r):
        c = counts[i]
        if c:
            Z[:, i] = mean + (Z[:, nbr[i, :c]] - mean) @ coeffs[i, :c] + sd[i] * W[:, i]
        else:
            Z[:, i] = mean + sd[i] * W[:, i]
    return Z
