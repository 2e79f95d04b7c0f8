"""Pure-Python routing kernels (fallback for the compiled ``_core``).

Both implementations share one contract and must return identical results:

* ``D``: (n_nodes, n_nodes) float64 distances, node 0 is the depot.
* ``item_node`` / ``item_qty``: int64 arrays; an *item* is one delivery
  (possibly a split part of a stop) with its node and parcel count.
* ``routes``: (V, L) int64 item indices, row ``r`` valid up to ``lens[r]``.

All scans run in a fixed lexicographic order and accept the first move that
improves the total distance by more than ``EPS``.
"""
import math

EPS = 1e-9


def route_length(D, item_node, routes, lens, r):
    n = lens[r]
    if n == 0:
        return 0.0
    total = D[0, item_node[routes[r, 0]]]
    for k in range(1, n):
        total += D[item_node[routes[r, k - 1]], item_node[routes[r, k]]]
    total += D[item_node[routes[r, n - 1]], 0]
    return total


def total_length(D, item_node, routes, lens):
    total = 0.0
    for r in range(routes.shape[0]):
        total += route_length(D, item_node, routes, lens, r)
    return total


def _node(item_node, routes, lens, r, k):
    if k < 0 or k >= lens[r]:
        return 0
    return item_node[routes[r, k]]


def _load(item_qty, routes, lens, r):
    s = 0
    for k in range(lens[r]):
        s += item_qty[routes[r, k]]
    return s


def best_insertion(D, node, qty, item_node, item_qty, routes, lens, K):
    """Cheapest feasible (route, position) for a new item.

    Position ``j`` means "before the current j-th item".  Only the first
    empty route is considered.  Returns ``(-1, -1, inf)`` if nothing fits.
    """
    V = routes.shape[0]
    best_r, best_j, best = -1, -1, math.inf
    seen_empty = False
    for r in range(V):
        n = lens[r]
        if n == 0:
            if seen_empty:
                continue
            seen_empty = True
        if _load(item_qty, routes, lens, r) + qty > K:
            continue
        for j in range(n + 1):
            x = _node(item_node, routes, lens, r, j - 1)
            y = _node(item_node, routes, lens, r, j)
            delta = D[x, node] + D[node, y] - D[x, y]
            if delta < best:
                best_r, best_j, best = r, j, delta
    return best_r, best_j, best


def _insert(routes, lens, r, j, item):
    n = lens[r]
    for k in range(n, j, -1):
        routes[r, k] = routes[r, k - 1]
    routes[r, j] = item
    lens[r] = n + 1


def _remove(routes, lens, r, i):
    n = lens[r]
    item = routes[r, i]
    for k in range(i, n - 1):
        routes[r, k] = routes[r, k + 1]
    lens[r] = n - 1
    return item


def _try_two_opt(D, item_node, routes, lens):
    V = routes.shape[0]
    for r in range(V):
        n = lens[r]
        for i in range(n - 1):
            p = _node(item_node, routes, lens, r, i - 1)
            a = item_node[routes[r, i]]
            for j in range(i + 1, n):
                b = item_node[routes[r, j]]
                q = _node(item_node, routes, lens, r, j + 1)
                delta = D[p, b] + D[a, q] - D[p, a] - D[b, q]
                if delta < -EPS:
                    lo, hi = i, j
                    while lo < hi:
                        routes[r, lo], routes[r, hi] = routes[r, hi], routes[r, lo]
                        lo += 1
                        hi -= 1
                    return True
    return False


def _try_relocate(D, item_node, item_qty, routes, lens, loads, K):
    V = routes.shape[0]
    for r1 in range(V):
        n1 = lens[r1]
        for i in range(n1):
            it = routes[r1, i]
            a = item_node[it]
            q = item_qty[it]
            p = _node(item_node, routes, lens, r1, i - 1)
            nx = _node(item_node, routes, lens, r1, i + 1)
            gain = D[p, a] + D[a, nx] - D[p, nx]
            seen_empty = False
            for r2 in range(V):
                n2 = lens[r2]
                if n2 == 0:
                    if seen_empty or n1 == 1:
                        continue
                    seen_empty = True
                if r2 != r1 and loads[r2] + q > K:
                    continue
                for j in range(n2 + 1):
                    if r2 == r1 and (j == i or j == i + 1):
                        continue
                    x = _node(item_node, routes, lens, r2, j - 1)
                    y = _node(item_node, routes, lens, r2, j)
                    delta = D[x, a] + D[a, y] - D[x, y] - gain
                    if delta < -EPS:
                        _remove(routes, lens, r1, i)
                        if r2 == r1 and j > i:
                            j -= 1
                        _insert(routes, lens, r2, j, it)
                        loads[r1] -= q
                        loads[r2] += q
                        return True
    return False


def _try_swap(D, item_node, item_qty, routes, lens, loads, K):
    V = routes.shape[0]
    for r1 in range(V):
        n1 = lens[r1]
        for i in range(n1):
            ia = routes[r1, i]
            a = item_node[ia]
            qa = item_qty[ia]
            p1 = _node(item_node, routes, lens, r1, i - 1)
            n1x = _node(item_node, routes, lens, r1, i + 1)
            for r2 in range(r1 + 1, V):
                n2 = lens[r2]
                for j in range(n2):
                    ib = routes[r2, j]
                    qb = item_qty[ib]
                    if loads[r1] - qa + qb > K or loads[r2] - qb + qa > K:
                        continue
                    b = item_node[ib]
                    p2 = _node(item_node, routes, lens, r2, j - 1)
                    n2x = _node(item_node, routes, lens, r2, j + 1)
                    delta = (D[p1, b] + D[b, n1x] - D[p1, a] - D[a, n1x]
                             + D[p2, a] + D[a, n2x] - D[p2, b] - D[b, n2x])
                    if delta < -EPS:
                        routes[r1, i] = ib
                        routes[r2, j] = ia
                        loads[r1] += qb - qa
                        loads[r2] += qa - qb
                        return True
    return False


def _try_two_opt_star(D, item_node, item_qty, routes, lens, loads, K, buf):
    V = routes.shape[0]
    for r1 in range(V):
        n1 = lens[r1]
        if n1 == 0:
            continue
        for r2 in range(r1 + 1, V):
            n2 = lens[r2]
            if n2 == 0:
                continue
            pre1 = 0
            for i in range(n1 + 1):
                if i > 0:
                    pre1 += item_qty[routes[r1, i - 1]]
                a = _node(item_node, routes, lens, r1, i - 1)
                b = _node(item_node, routes, lens, r1, i)
                pre2 = 0
                for j in range(n2 + 1):
                    if j > 0:
                        pre2 += item_qty[routes[r2, j - 1]]
                    if (i == 0 and j == 0) or (i == n1 and j == n2):
                        continue
                    if pre1 + loads[r2] - pre2 > K or pre2 + loads[r1] - pre1 > K:
                        continue
                    c = _node(item_node, routes, lens, r2, j - 1)
                    d = _node(item_node, routes, lens, r2, j)
                    delta = D[a, d] + D[c, b] - D[a, b] - D[c, d]
                    if delta < -EPS:
                        # new r1 = r1[:i] + r2[j:], new r2 = r2[:j] + r1[i:]
                        t1 = n1 - i
                        for k in range(t1):
                            buf[k] = routes[r1, i + k]
                        t2 = n2 - j
                        for k in range(t2):
                            routes[r1, i + k] = routes[r2, j + k]
                        for k in range(t1):
                            routes[r2, j + k] = buf[k]
                        lens[r1] = i + t2
                        lens[r2] = j + t1
                        new1 = pre1 + loads[r2] - pre2
                        new2 = pre2 + loads[r1] - pre1
                        loads[r1] = new1
                        loads[r2] = new2
                        return True
    return False


def local_search(D, item_node, item_qty, routes, lens, K, max_moves):
    """Improve the routes in place until no move helps; returns #moves.

    Neighbourhoods, scanned in this order after every accepted move:
    intra-route 2-opt, relocate, inter-route swap, 2-opt*.
    """
    import numpy as np

    V = routes.shape[0]
    loads = np.zeros(V, dtype=np.int64)
    for r in range(V):
        loads[r] = _load(item_qty, routes, lens, r)
    buf = np.zeros(routes.shape[1], dtype=np.int64)
    moves = 0
    while moves < max_moves:
        if _try_two_opt(D, item_node, routes, lens):
            pass
        elif _try_relocate(D, item_node, item_qty, routes, lens, loads, K):
            pass
        elif _try_swap(D, item_node, item_qty, routes, lens, loads, K):
            pass
        elif _try_two_opt_star(D, item_node, item_qty, routes, lens, loads, K, buf):
            pass
        else:
            break
        moves += 1
    return moves
