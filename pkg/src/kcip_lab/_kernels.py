"""Compiled inner loops for the simulators.

All randomness arrives as pre-drawn arrays so a trajectory depends only on
the numpy Generator stream, never on numba's internal RNG.
"""
import numpy as np
from numba import njit

# counter slots shared by kcip_run and its callers
V, ADJ, MIN_V, COLL, OCC, T = range(6)


@njit(cache=True)
def _split_check(state, nbrs, v, stamp, queue, mark):
    """True if the occupied neighbours of empty site v lie in >= 2 components."""
    deg = nbrs.shape[1]
    first = -1
    nocc = 0
    for j in range(deg):
        u = nbrs[v, j]
        if state[u]:
            nocc += 1
            if first < 0:
                first = u
    if nocc < 2:
        return False
    stamp[first] = mark
    head = 0
    tail = 1
    queue[0] = first
    found = 1
    while head < tail:
        w = queue[head]
        head += 1
        for j in range(deg):
            u = nbrs[w, j]
            if state[u] and stamp[u] != mark:
                stamp[u] = mark
                queue[tail] = u
                tail += 1
                for jj in range(deg):
                    if nbrs[v, jj] == u:
                        found += 1
                if found == nocc:
                    return False
    return True


@njit(cache=True)
def kcip_run(state, nbrs, p, vs, us, ctr, kmax, track_collisions, stamp, queue):
    """Apply len(vs) KCIP updates in place, maintaining counters.

    ctr = [V, adjacent pairs, min V, collisions, occupation count, steps].
    Occupation counts post-step states that are independent with
    1 <= V <= kmax.
    """
    deg = nbrs.shape[1]
    for s in range(vs.shape[0]):
        v = vs[s]
        occ_nb = 0
        for j in range(deg):
            occ_nb += state[nbrs[v, j]]
        if occ_nb > 0:
            new = 1 if us[s] <= p else 0
            old = state[v]
            if new != old:
                if new == 1:
                    if track_collisions and occ_nb >= 2:
                        ctr[T] += 1
                        if _split_check(state, nbrs, v, stamp, queue, ctr[T]):
                            ctr[COLL] += 1
                    state[v] = 1
                    ctr[V] += 1
                    ctr[ADJ] += occ_nb
                else:
                    state[v] = 0
                    ctr[V] -= 1
                    ctr[ADJ] -= occ_nb
                    if ctr[V] < ctr[MIN_V]:
                        ctr[MIN_V] = ctr[V]
        if ctr[ADJ] == 0 and ctr[V] >= 1 and ctr[V] <= kmax:
            ctr[OCC] += 1


@njit(cache=True)
def count_components(state, nbrs):
    n = state.shape[0]
    seen = np.zeros(n, dtype=np.uint8)
    queue = np.empty(n, dtype=np.int64)
    comps = 0
    deg = nbrs.shape[1]
    for s in range(n):
        if state[s] and not seen[s]:
            comps += 1
            seen[s] = 1
            queue[0] = s
            head = 0
            tail = 1
            while head < tail:
                w = queue[head]
                head += 1
                for j in range(deg):
                    u = nbrs[w, j]
                    if state[u] and not seen[u]:
                        seen[u] = 1
                        queue[tail] = u
                        tail += 1
    return comps


@njit(cache=True)
def adjacent_pairs(state, nbrs):
    total = 0
    for v in range(state.shape[0]):
        if state[v]:
            for j in range(nbrs.shape[1]):
                total += state[nbrs[v, j]]
    return total // 2


@njit(cache=True)
def coalescent_run(positions, occ, nocc, nbrs, q, us, picks, dirs):
    """Advance the coalescent len(us) steps in place; returns the new |O|.

    ``occ[:nocc]`` holds the occupied sites in increasing order.
    """
    k = positions.shape[0]
    for s in range(us.shape[0]):
        if us[s] > q * nocc:
            continue
        i = int(picks[s] * nocc)
        if i >= nocc:
            i = nocc - 1
        src = occ[i]
        dst = nbrs[src, dirs[s]]
        dst_occupied = False
        for w in range(k):
            if positions[w] == src:
                positions[w] = dst
            elif positions[w] == dst:
                dst_occupied = True
        # drop src from the sorted list
        for j in range(i, nocc - 1):
            occ[j] = occ[j + 1]
        nocc -= 1
        if not dst_occupied:
            j = nocc
            while j > 0 and occ[j - 1] > dst:
                occ[j] = occ[j - 1]
                j -= 1
            occ[j] = dst
            nocc += 1
    return nocc


@njit(cache=True)
def se_collision_run(state, nbrs, ends, edges, adj):
    """Run SE swaps until an adjacent pair appears.

    Returns (steps used, adjacency count). Steps used equals len(edges) and
    adj == 0 when no collision happened within the block.
    """
    deg = nbrs.shape[1]
    for s in range(edges.shape[0]):
        a = ends[edges[s], 0]
        b = ends[edges[s], 1]
        if state[a] != state[b]:
            src = a if state[a] else b
            dst = b if state[a] else a
            for j in range(deg):
                adj -= state[nbrs[src, j]]
            state[src] = 0
            state[dst] = 1
            for j in range(deg):
                adj += state[nbrs[dst, j]]
            if adj > 0:
                return s + 1, adj
    return edges.shape[0], adj
