"""Scalar hot loops: union-find region merging and HNSW graph traversal.

Every function here is numba-compatible Python and is compiled through
``_accel.maybe_jit``. With PROTOSEG_NUMBA=0 the same bodies run on the
interpreter, which keeps fallback and accelerated behavior identical.

Conventions:
  - vectors passed to HNSW kernels are float64, L2-normalized rows;
    distance is 1 - dot.
  - heaps order by (value, id) so every tie-break is deterministic.
"""

from __future__ import annotations

import numpy as np

from ._accel import maybe_jit


# ---------------------------------------------------------------------------
# union-find


@maybe_jit
def _uf_find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@maybe_jit
def _uf_union(parent, rank, size, a, b):
    # a, b must be roots; returns the surviving root
    if rank[a] < rank[b]:
        a, b = b, a
    parent[b] = a
    size[a] += size[b]
    if rank[a] == rank[b]:
        rank[a] += 1
    return a


@maybe_jit
def felz_merge(ea, eb, ew, parent, rank, size, thresh, k):
    """Merge pass over edges sorted ascending by (weight, a, b).

    Joins components when the edge weight does not exceed either side's
    internal-difference threshold Int(C) + k/|C|.
    """
    for i in range(ea.shape[0]):
        a = _uf_find(parent, ea[i])
        b = _uf_find(parent, eb[i])
        if a == b:
            continue
        w = ew[i]
        if w <= thresh[a] and w <= thresh[b]:
            r = _uf_union(parent, rank, size, a, b)
            thresh[r] = w + k / size[r]


@maybe_jit
def felz_absorb_small(ea, eb, parent, rank, size, min_size):
    """Post-pass: absorb any component below min_size into its neighbor.

    Edges arrive in the same ascending order, so a small component merges
    through its minimum-weight connecting edge first.
    """
    for i in range(ea.shape[0]):
        a = _uf_find(parent, ea[i])
        b = _uf_find(parent, eb[i])
        if a != b and (size[a] < min_size or size[b] < min_size):
            _uf_union(parent, rank, size, a, b)


@maybe_jit
def uf_roots(parent, out):
    for i in range(parent.shape[0]):
        out[i] = _uf_find(parent, i)


# ---------------------------------------------------------------------------
# binary heaps on preallocated arrays, ordered by (value, id)


@maybe_jit
def _minheap_push(hd, hi, n, d, ident):
    hd[n] = d
    hi[n] = ident
    c = n
    while c > 0:
        p = (c - 1) >> 1
        if hd[p] > hd[c] or (hd[p] == hd[c] and hi[p] > hi[c]):
            hd[p], hd[c] = hd[c], hd[p]
            hi[p], hi[c] = hi[c], hi[p]
            c = p
        else:
            break
    return n + 1


@maybe_jit
def _minheap_pop(hd, hi, n):
    d = hd[0]
    ident = hi[0]
    n -= 1
    hd[0] = hd[n]
    hi[0] = hi[n]
    c = 0
    while True:
        l = 2 * c + 1
        if l >= n:
            break
        m = l
        r = l + 1
        if r < n and (hd[r] < hd[l] or (hd[r] == hd[l] and hi[r] < hi[l])):
            m = r
        if hd[m] < hd[c] or (hd[m] == hd[c] and hi[m] < hi[c]):
            hd[m], hd[c] = hd[c], hd[m]
            hi[m], hi[c] = hi[c], hi[m]
            c = m
        else:
            break
    return d, ident, n


@maybe_jit
def _maxheap_push(hd, hi, n, d, ident):
    hd[n] = d
    hi[n] = ident
    c = n
    while c > 0:
        p = (c - 1) >> 1
        if hd[p] < hd[c] or (hd[p] == hd[c] and hi[p] < hi[c]):
            hd[p], hd[c] = hd[c], hd[p]
            hi[p], hi[c] = hi[c], hi[p]
            c = p
        else:
            break
    return n + 1


@maybe_jit
def _maxheap_pop(hd, hi, n):
    d = hd[0]
    ident = hi[0]
    n -= 1
    hd[0] = hd[n]
    hi[0] = hi[n]
    c = 0
    while True:
        l = 2 * c + 1
        if l >= n:
            break
        m = l
        r = l + 1
        if r < n and (hd[r] > hd[l] or (hd[r] == hd[l] and hi[r] > hi[l])):
            m = r
        if hd[m] > hd[c] or (hd[m] == hd[c] and hi[m] > hi[c]):
            hd[m], hd[c] = hd[c], hd[m]
            hi[m], hi[c] = hi[c], hi[m]
            c = m
        else:
            break
    return d, ident, n


# ---------------------------------------------------------------------------
# HNSW


@maybe_jit
def _new_f8(n):
    return np.zeros(n, dtype=np.float64)


@maybe_jit
def _new_i4(n):
    return np.zeros(n, dtype=np.int32)


@maybe_jit
def _new_i8(n):
    return np.zeros(n, dtype=np.int64)


@maybe_jit
def _dist_to(vecs, idx, q):
    s = 0.0
    for t in range(q.shape[0]):
        s += vecs[idx, t] * q[t]
    return 1.0 - s


@maybe_jit
def _layer_view(l, adj0, cnt0, adj_up, cnt_up):
    if l == 0:
        return adj0, cnt0
    return adj_up[l - 1], cnt_up[l - 1]


@maybe_jit
def _search_layer(vecs, adj, cnt, eps, n_eps, q, ef, visited, epoch,
                  cd, ci, rd, ri):
    """Best-first beam search on one layer.

    Leaves up to ``ef`` nearest nodes in (rd, ri) as a max-heap and
    returns its size. ``visited`` holds epoch marks so callers can reuse
    the array without clearing.
    """
    n_c = 0
    n_r = 0
    for e in range(n_eps):
        node = eps[e]
        if visited[node] == epoch:
            continue
        visited[node] = epoch
        d = _dist_to(vecs, node, q)
        n_c = _minheap_push(cd, ci, n_c, d, node)
        n_r = _maxheap_push(rd, ri, n_r, d, node)
        if n_r > ef:
            _, _, n_r = _maxheap_pop(rd, ri, n_r)
    while n_c > 0:
        d, node, n_c = _minheap_pop(cd, ci, n_c)
        if n_r >= ef and (d > rd[0] or (d == rd[0] and node > ri[0])):
            break
        for j in range(cnt[node]):
            nb = adj[node, j]
            if visited[nb] == epoch:
                continue
            visited[nb] = epoch
            dn = _dist_to(vecs, nb, q)
            if n_r < ef:
                n_c = _minheap_push(cd, ci, n_c, dn, nb)
                n_r = _maxheap_push(rd, ri, n_r, dn, nb)
            elif dn < rd[0] or (dn == rd[0] and nb < ri[0]):
                n_c = _minheap_push(cd, ci, n_c, dn, nb)
                n_r = _maxheap_push(rd, ri, n_r, dn, nb)
                _, _, n_r = _maxheap_pop(rd, ri, n_r)
    return n_r


@maybe_jit
def _drain_ascending(rd, ri, n_r, sd, si):
    # empty the max-heap into sd/si sorted ascending by (distance, id)
    k = n_r
    while k > 0:
        d, ident, k = _maxheap_pop(rd, ri, k)
        sd[k] = d
        si[k] = ident
    return n_r


@maybe_jit
def _select_heuristic(vecs, cand_d, cand_i, n_cand, m, out_i, disc_d, disc_i):
    """Diversity-aware neighbor selection over ascending candidates.

    Keeps a candidate only if it is closer to the query point than to any
    already-kept neighbor; pruned candidates refill remaining slots.
    """
    n_out = 0
    n_disc = 0
    for c in range(n_cand):
        if n_out == m:
            break
        d_cq = cand_d[c]
        e = cand_i[c]
        keep = True
        for s in range(n_out):
            d_es = _dist_to(vecs, e, vecs[out_i[s]])
            if d_es < d_cq:
                keep = False
                break
        if keep:
            out_i[n_out] = e
            n_out += 1
        else:
            disc_d[n_disc] = d_cq
            disc_i[n_disc] = e
            n_disc += 1
    j = 0
    while n_out < m and j < n_disc:
        out_i[n_out] = disc_i[j]
        n_out += 1
        j += 1
    return n_out


@maybe_jit
def _prune_neighbors(vecs, adj, cnt, nb, newcomer, cap,
                     nnd, nni, sel_i, disc_d, disc_i):
    # rebuild nb's neighbor list from existing + newcomer via the heuristic
    m = cnt[nb]
    for t in range(m):
        nnd[t] = _dist_to(vecs, adj[nb, t], vecs[nb])
        nni[t] = adj[nb, t]
    nnd[m] = _dist_to(vecs, newcomer, vecs[nb])
    nni[m] = newcomer
    m += 1
    # insertion sort by (distance, id); m <= cap + 1 stays tiny
    for a in range(1, m):
        dv = nnd[a]
        iv = nni[a]
        b = a - 1
        while b >= 0 and (nnd[b] > dv or (nnd[b] == dv and nni[b] > iv)):
            nnd[b + 1] = nnd[b]
            nni[b + 1] = nni[b]
            b -= 1
        nnd[b + 1] = dv
        nni[b + 1] = iv
    n_new = _select_heuristic(vecs, nnd, nni, m, cap, sel_i, disc_d, disc_i)
    for t in range(n_new):
        adj[nb, t] = sel_i[t]
    cnt[nb] = n_new


@maybe_jit
def hnsw_build(vecs, levels, m_conn, m0, ef_construction,
               adj0, cnt0, adj_up, cnt_up):
    """Insert all vectors in index order; fills the adjacency arrays.

    Returns the entry-point id. adj0/cnt0 hold layer 0; adj_up/cnt_up hold
    layers 1..L as [L, N, m_conn] / [L, N].
    """
    n = vecs.shape[0]
    cap_heap = n + ef_construction + 8

    vis = _new_i8(n)
    cd = _new_f8(cap_heap)
    ci = _new_i4(cap_heap)
    rd = _new_f8(ef_construction + 2)
    ri = _new_i4(ef_construction + 2)
    sd = _new_f8(ef_construction + 2)
    si = _new_i4(ef_construction + 2)
    eps = _new_i4(ef_construction + 2)
    sel = _new_i4(m0 + 2)
    sel2 = _new_i4(m0 + 2)
    disc_d = _new_f8(ef_construction + m0 + 4)
    disc_i = _new_i4(ef_construction + m0 + 4)
    nnd = _new_f8(m0 + 2)
    nni = _new_i4(m0 + 2)

    entry = 0
    top = levels[0]
    epoch = 0
    for i in range(1, n):
        q = vecs[i]
        lev = levels[i]
        ep = entry
        l = top
        while l > lev:
            adj, cnt = _layer_view(l, adj0, cnt0, adj_up, cnt_up)
            epoch += 1
            eps[0] = ep
            _search_layer(vecs, adj, cnt, eps, 1, q, 1, vis, epoch,
                          cd, ci, rd, ri)
            ep = ri[0]
            l -= 1
        l = lev if lev < top else top
        eps[0] = ep
        n_eps = 1
        while l >= 0:
            adj, cnt = _layer_view(l, adj0, cnt0, adj_up, cnt_up)
            cap = m0 if l == 0 else m_conn
            epoch += 1
            n_r = _search_layer(vecs, adj, cnt, eps, n_eps, q,
                                ef_construction, vis, epoch, cd, ci, rd, ri)
            n_cand = _drain_ascending(rd, ri, n_r, sd, si)
            n_sel = _select_heuristic(vecs, sd, si, n_cand, m_conn,
                                      sel, disc_d, disc_i)
            cnt[i] = 0
            for s in range(n_sel):
                adj[i, cnt[i]] = sel[s]
                cnt[i] += 1
            for s in range(n_sel):
                nb = sel[s]
                if cnt[nb] < cap:
                    adj[nb, cnt[nb]] = i
                    cnt[nb] += 1
                else:
                    _prune_neighbors(vecs, adj, cnt, nb, i, cap,
                                     nnd, nni, sel2, disc_d, disc_i)
            for t in range(n_cand):
                eps[t] = si[t]
            n_eps = n_cand
            l -= 1
        if lev > top:
            entry = i
            top = lev
    return entry


@maybe_jit
def hnsw_query(vecs, entry, top, adj0, cnt0, adj_up, cnt_up, q, k, ef,
               out_d, out_i):
    """Greedy descent then layer-0 beam search; returns result count.

    out_d/out_i receive up to k (distance, id) pairs ascending.
    """
    n = vecs.shape[0]
    ef_eff = ef if ef > k else k
    cap_heap = n + ef_eff + 8
    vis = _new_i8(n)
    cd = _new_f8(cap_heap)
    ci = _new_i4(cap_heap)
    rd = _new_f8(ef_eff + 2)
    ri = _new_i4(ef_eff + 2)
    sd = _new_f8(ef_eff + 2)
    si = _new_i4(ef_eff + 2)
    eps = _new_i4(2)

    epoch = 0
    ep = entry
    l = top
    while l > 0:
        adj, cnt = _layer_view(l, adj0, cnt0, adj_up, cnt_up)
        epoch += 1
        eps[0] = ep
        _search_layer(vecs, adj, cnt, eps, 1, q, 1, vis, epoch, cd, ci, rd, ri)
        ep = ri[0]
        l -= 1
    epoch += 1
    eps[0] = ep
    n_r = _search_layer(vecs, adj0, cnt0, eps, 1, q, ef_eff, vis, epoch,
                        cd, ci, rd, ri)
    n_sorted = _drain_ascending(rd, ri, n_r, sd, si)
    n_out = k if k < n_sorted else n_sorted
    for t in range(n_out):
        out_d[t] = sd[t]
        out_i[t] = si[t]
    return n_out
