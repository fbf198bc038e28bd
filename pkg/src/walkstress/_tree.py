"""Compiled CART kernels used by :mod:`walkstress.forest`.

Trees are stored as flat arrays. Node 0 is the root; ``left == -1`` marks a leaf.
"""
import numba as nb
import numpy as np

_TIE_EPS = 1e-12


@nb.njit(cache=True, nogil=True)
def _next(state):
    # xorshift64*
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return (x * np.uint64(2685821657736338717)) >> np.uint64(11)


def rank_encode(Xt):
    """Dense per-feature ranks of feature-major ``Xt`` plus the sorted distinct
    values (row f of ``uniq`` padded with +inf)."""
    n_features, n_rows = Xt.shape
    ranks = np.empty((n_features, n_rows), np.int64)
    uniq_rows = []
    for f in range(n_features):
        u, inv = np.unique(Xt[f], return_inverse=True)
        ranks[f] = inv
        uniq_rows.append(u)
    width = max(len(u) for u in uniq_rows)
    uniq = np.full((n_features, width), np.inf)
    for f, u in enumerate(uniq_rows):
        uniq[f, :len(u)] = u
    return ranks, uniq


@nb.njit(cache=True, nogil=True)
def _radix_sort(keys, n, max_key, tmp, hist):
    """In-place LSD radix sort of keys[:n] (non-negative), 8 bits per pass."""
    src = keys
    dst = tmp
    shift = 0
    swapped = False
    while (max_key >> shift) > 0:
        hist[:] = 0
        for i in range(n):
            hist[(src[i] >> shift) & 255] += 1
        total = 0
        for b in range(256):
            c = hist[b]
            hist[b] = total
            total += c
        for i in range(n):
            b = (src[i] >> shift) & 255
            dst[hist[b]] = src[i]
            hist[b] += 1
        src, dst = dst, src
        swapped = not swapped
        shift += 8
    if swapped:
        keys[:n] = tmp[:n]


@nb.njit(cache=True, nogil=True)
def build_tree(ranks, uniq, y, sample_idx, n_classes, max_features, rng_seed, max_depth,
               min_samples_split):
    """Grow one tree on the rows ``sample_idx`` (duplicates allowed).

    ``ranks``/``uniq`` come from :func:`rank_encode`. Each candidate feature is
    split by sorting packed (rank, class) keys. Returns the node arrays, the
    node count and the per-feature sum of weighted impurity decreases.
    """
    n_features = ranks.shape[0]
    m = sample_idx.shape[0]
    shift = 1
    while (1 << shift) < n_classes:
        shift += 1
    mask = (1 << shift) - 1
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros((cap, n_classes))
    n_node = np.zeros(cap, np.int64)
    importance = np.zeros(n_features)

    idx = sample_idx.copy()
    keys = np.empty(m, np.int64)
    scratch = np.empty(m, np.int64)
    hist = np.zeros(256, np.int64)
    perm = np.arange(n_features)
    counts = np.zeros(n_classes)
    lcounts = np.zeros(n_classes)
    state = np.empty(1, np.uint64)
    state[0] = np.uint64(rng_seed) | np.uint64(1)

    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    top = 1
    node_count = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        n = end - start

        counts[:] = 0.0
        for i in range(start, end):
            counts[y[idx[i]]] += 1.0
        value[node, :] = counts
        n_node[node] = n
        sq = 0.0
        for c in range(n_classes):
            sq += counts[c] * counts[c]
        node_imp_n = n - sq / n  # n * gini
        if n < min_samples_split or node_imp_n <= 1e-12 or (max_depth >= 0 and depth >= max_depth):
            continue

        best_crit = np.inf
        best_f = -1
        best_thr = 0.0
        best_rank = 0
        tol = _TIE_EPS * n
        for j in range(n_features):
            perm[j] = j
        drawn = 0
        nonconst = 0
        while drawn < n_features and nonconst < max_features:
            r = drawn + np.int64(_next(state) % np.uint64(n_features - drawn))
            f = perm[r]
            perm[r] = perm[drawn]
            perm[drawn] = f
            drawn += 1

            lo = ranks[f, idx[start]]
            hi = lo
            for i in range(n):
                rk = ranks[f, idx[start + i]]
                if rk < lo:
                    lo = rk
                if rk > hi:
                    hi = rk
            if hi == lo:
                continue
            nonconst += 1
            for i in range(n):
                row = idx[start + i]
                keys[i] = ((ranks[f, row] - lo) << shift) | y[row]
            if n >= 16:
                _radix_sort(keys, n, ((hi - lo) << shift) | mask, scratch, hist)
                ks = keys[:n]
            else:
                ks = keys[:n]
                ks.sort()
            lcounts[:] = 0.0
            sl = 0.0
            sr = sq
            for pos in range(n - 1):
                key = ks[pos]
                c = key & mask
                lc = lcounts[c]
                rc = counts[c] - lc
                sl += 2.0 * lc + 1.0
                sr -= 2.0 * rc - 1.0
                lcounts[c] = lc + 1.0
                rk = (key >> shift) + lo
                rn = (ks[pos + 1] >> shift) + lo
                if rn == rk:
                    continue
                nl = pos + 1.0
                nr = n - nl
                crit = (nl - sl / nl) + (nr - sr / nr)
                if crit > best_crit + tol:
                    continue
                v = uniq[f, rk]
                vn = uniq[f, rn]
                thr = 0.5 * (v + vn)
                if thr >= vn:
                    thr = v
                if crit < best_crit - tol:
                    take = True
                else:
                    take = f < best_f or (f == best_f and thr < best_thr)
                if take:
                    best_crit = crit
                    best_f = f
                    best_thr = thr
                    best_rank = rk

        if best_f < 0:
            continue

        # partition idx[start:end] so rows with x <= thr come first
        i = start
        k = end - 1
        while i <= k:
            if ranks[best_f, idx[i]] <= best_rank:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[k]
                idx[k] = tmp
                k -= 1
        mid = i
        feature[node] = best_f
        threshold[node] = best_thr
        importance[best_f] += node_imp_n - best_crit
        lnode = node_count
        rnode = node_count + 1
        node_count += 2
        left[node] = lnode
        right[node] = rnode

        st_node[top] = rnode
        st_start[top] = mid
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lnode
        st_start[top] = start
        st_end[top] = mid
        st_depth[top] = depth + 1
        top += 1

    return (feature[:node_count].copy(), threshold[:node_count].copy(), left[:node_count].copy(),
            right[:node_count].copy(), value[:node_count].copy(), n_node[:node_count].copy(),
            importance)


@nb.njit(cache=True, nogil=True)
def apply_tree(feature, threshold, left, right, X):
    """Leaf index reached by each row of X."""
    out = np.empty(X.shape[0], np.int64)
    for r in range(X.shape[0]):
        node = 0
        while left[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


@nb.njit(cache=True, nogil=True)
def accumulate_proba(feature, threshold, left, right, value, X, out):
    """Add this tree's leaf class frequencies for each row of X into ``out``."""
    n_classes = value.shape[1]
    for r in range(X.shape[0]):
        node = 0
        while left[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        total = 0.0
        for c in range(n_classes):
            total += value[node, c]
        for c in range(n_classes):
            out[r, c] += value[node, c] / total
