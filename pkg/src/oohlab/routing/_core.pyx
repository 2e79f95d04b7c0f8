# cython: language_level=3
"""Compiled routing kernels; same contract and results as ``_pycore``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

ctypedef cnp.int64_t I64

cdef double EPS = 1e-9


cdef inline Py_ssize_t _node(const I64[:] item_node, I64[:, :] routes, I64[:] lens,
                             Py_ssize_t r, Py_ssize_t k) noexcept nogil:
    if k < 0 or k >= lens[r]:
        return 0
    return item_node[routes[r, k]]


cdef inline I64 _load(const I64[:] item_qty, I64[:, :] routes, I64[:] lens, Py_ssize_t r) noexcept nogil:
    cdef I64 s = 0
    cdef Py_ssize_t k
    for k in range(lens[r]):
        s += item_qty[routes[r, k]]
    return s


def route_length(const double[:, :] D, const I64[:] item_node, I64[:, :] routes, I64[:] lens, Py_ssize_t r):
    cdef Py_ssize_t n = lens[r], k
    cdef double total
    if n == 0:
        return 0.0
    total = D[0, item_node[routes[r, 0]]]
    for k in range(1, n):
        total += D[item_node[routes[r, k - 1]], item_node[routes[r, k]]]
    total += D[item_node[routes[r, n - 1]], 0]
    return total


def total_length(const double[:, :] D, const I64[:] item_node, I64[:, :] routes, I64[:] lens):
    cdef double total = 0.0
    cdef Py_ssize_t r
    for r in range(routes.shape[0]):
        total += route_length(D, item_node, routes, lens, r)
    return total


def best_insertion(const double[:, :] D, Py_ssize_t node, I64 qty, const I64[:] item_node,
                   const I64[:] item_qty, I64[:, :] routes, I64[:] lens, I64 K):
    cdef Py_ssize_t V = routes.shape[0], r, j, n, x, y
    cdef Py_ssize_t best_r = -1, best_j = -1
    cdef double best = INFINITY, delta
    cdef bint seen_empty = False
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
                best_r = r
                best_j = j
                best = delta
    return best_r, best_j, best


cdef inline void _insert(I64[:, :] routes, I64[:] lens, Py_ssize_t r, Py_ssize_t j, I64 item) noexcept nogil:
    cdef Py_ssize_t n = lens[r], k
    k = n
    while k > j:
        routes[r, k] = routes[r, k - 1]
        k -= 1
    routes[r, j] = item
    lens[r] = n + 1


cdef inline I64 _remove(I64[:, :] routes, I64[:] lens, Py_ssize_t r, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t n = lens[r], k
    cdef I64 item = routes[r, i]
    for k in range(i, n - 1):
        routes[r, k] = routes[r, k + 1]
    lens[r] = n - 1
    return item


cdef bint _try_two_opt(const double[:, :] D, const I64[:] item_node, I64[:, :] routes,
                       I64[:] lens) noexcept nogil:
    cdef Py_ssize_t V = routes.shape[0], r, n, i, j, p, a, b, q, lo, hi
    cdef I64 tmp
    cdef double delta
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
                    lo = i
                    hi = j
                    while lo < hi:
                        tmp = routes[r, lo]
                        routes[r, lo] = routes[r, hi]
                        routes[r, hi] = tmp
                        lo += 1
                        hi -= 1
                    return True
    return False


cdef bint _try_relocate(const double[:, :] D, const I64[:] item_node, const I64[:] item_qty,
                        I64[:, :] routes, I64[:] lens, I64[:] loads, I64 K) noexcept nogil:
    cdef Py_ssize_t V = routes.shape[0], r1, r2, n1, n2, i, j, a, p, nx, x, y
    cdef I64 it, q
    cdef double gain, delta
    cdef bint seen_empty
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


cdef bint _try_swap(const double[:, :] D, const I64[:] item_node, const I64[:] item_qty,
                    I64[:, :] routes, I64[:] lens, I64[:] loads, I64 K) noexcept nogil:
    cdef Py_ssize_t V = routes.shape[0], r1, r2, n1, n2, i, j, a, b, p1, n1x, p2, n2x
    cdef I64 ia, ib, qa, qb
    cdef double delta
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


cdef bint _try_two_opt_star(const double[:, :] D, const I64[:] item_node, const I64[:] item_qty,
                            I64[:, :] routes, I64[:] lens, I64[:] loads, I64 K,
                            I64[:] buf) noexcept nogil:
    cdef Py_ssize_t V = routes.shape[0], r1, r2, n1, n2, i, j, a, b, c, d, k, t1, t2
    cdef I64 pre1, pre2, new1, new2
    cdef double delta
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


def local_search(const double[:, :] D, const I64[:] item_node, const I64[:] item_qty,
                 I64[:, :] routes, I64[:] lens, I64 K, I64 max_moves):
    cdef Py_ssize_t V = routes.shape[0], r
    cdef I64[:] loads = np.zeros(V, dtype=np.int64)
    cdef I64[:] buf = np.zeros(routes.shape[1], dtype=np.int64)
    cdef I64 moves = 0
    for r in range(V):
        loads[r] = _load(item_qty, routes, lens, r)
    with nogil:
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
