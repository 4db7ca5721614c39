# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled asynchronous threshold dynamics for symmetric sigma-pi networks.

Mirrors ``consat._kernel_py`` operation for operation, including the random
stream, so both backends produce identical flip sequences.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef enum:
    STABLE = 0
    UNSTABLE = 1
    PLATEAU = 2


cdef class FlipKernel:
    cdef public object weights_array
    cdef int64_t[::1] conn_ptr
    cdef int64_t[::1] conn_units
    cdef int64_t[::1] unit_ptr
    cdef int64_t[::1] unit_conns
    cdef double[::1] w
    cdef unsigned char[::1] clamped
    cdef unsigned char[::1] y
    cdef double[::1] z
    cdef int64_t[::1] zeros
    cdef int64_t[::1] unstable
    cdef int64_t[::1] unstable_pos
    cdef int64_t n_unstable
    cdef int64_t[::1] plateau
    cdef int64_t[::1] plateau_pos
    cdef int64_t n_plateau
    cdef unsigned char[::1] kind
    cdef public int64_t num_units
    cdef public double tol
    cdef uint64_t rng

    def __init__(self, conn_ptr, conn_units, unit_ptr, unit_conns, weights, clamped, double tol=1e-9):
        self.conn_ptr = np.ascontiguousarray(conn_ptr, dtype=np.int64)
        self.conn_units = np.ascontiguousarray(conn_units, dtype=np.int64)
        self.unit_ptr = np.ascontiguousarray(unit_ptr, dtype=np.int64)
        self.unit_conns = np.ascontiguousarray(unit_conns, dtype=np.int64)
        self.weights_array = weights
        self.w = weights
        n = len(unit_ptr) - 1
        self.num_units = n
        self.clamped = np.ascontiguousarray(clamped, dtype=np.uint8)
        self.y = np.zeros(n, dtype=np.uint8)
        self.z = np.zeros(n, dtype=np.float64)
        self.zeros = np.zeros(len(conn_ptr) - 1, dtype=np.int64)
        self.unstable = np.zeros(n, dtype=np.int64)
        self.unstable_pos = np.full(n, -1, dtype=np.int64)
        self.plateau = np.zeros(n, dtype=np.int64)
        self.plateau_pos = np.full(n, -1, dtype=np.int64)
        self.kind = np.zeros(n, dtype=np.uint8)
        self.n_unstable = 0
        self.n_plateau = 0
        self.tol = tol
        self.rng = 1

    property y_values:
        def __get__(self):
            return np.asarray(self.y)

    property z_values:
        def __get__(self):
            return np.asarray(self.z)

    property unstable_count:
        def __get__(self):
            return self.n_unstable

    property plateau_count:
        def __get__(self):
            return self.n_plateau

    def set_clamped(self, clamped):
        self.clamped = np.ascontiguousarray(clamped, dtype=np.uint8)

    def set_state(self, y):
        cdef unsigned char[::1] src = np.ascontiguousarray(y, dtype=np.uint8)
        cdef int64_t i
        for i in range(self.num_units):
            self.y[i] = src[i]
        self.recompute()

    def recompute(self):
        cdef int64_t s, k, i, nz, start, stop
        cdef double ws
        cdef int64_t n_conn = self.zeros.shape[0]
        for i in range(self.num_units):
            self.z[i] = 0.0
        for s in range(n_conn):
            start = self.conn_ptr[s]
            stop = self.conn_ptr[s + 1]
            nz = 0
            for k in range(start, stop):
                if self.y[self.conn_units[k]] == 0:
                    nz += 1
            self.zeros[s] = nz
            if nz > 1:
                continue
            ws = self.w[s]
            for k in range(start, stop):
                i = self.conn_units[k]
                if nz - (1 - self.y[i]) == 0:
                    self.z[i] += ws
        self.n_unstable = 0
        self.n_plateau = 0
        for i in range(self.num_units):
            self.unstable_pos[i] = -1
            self.plateau_pos[i] = -1
            self.kind[i] = STABLE
        for i in range(self.num_units):
            self._reclassify(i)

    cdef inline unsigned char _classify(self, int64_t i):
        cdef double zi
        if self.clamped[i]:
            return STABLE
        zi = self.z[i]
        if zi > self.tol:
            return UNSTABLE if self.y[i] == 0 else STABLE
        if zi < -self.tol:
            return UNSTABLE if self.y[i] == 1 else STABLE
        return PLATEAU

    cdef inline void _reclassify(self, int64_t i):
        cdef unsigned char new = self._classify(i)
        cdef unsigned char old = self.kind[i]
        cdef int64_t p, last
        if new == old:
            return
        if old == UNSTABLE:
            p = self.unstable_pos[i]
            last = self.unstable[self.n_unstable - 1]
            self.unstable[p] = last
            self.unstable_pos[last] = p
            self.n_unstable -= 1
            self.unstable_pos[i] = -1
        elif old == PLATEAU:
            p = self.plateau_pos[i]
            last = self.plateau[self.n_plateau - 1]
            self.plateau[p] = last
            self.plateau_pos[last] = p
            self.n_plateau -= 1
            self.plateau_pos[i] = -1
        if new == UNSTABLE:
            self.unstable[self.n_unstable] = i
            self.unstable_pos[i] = self.n_unstable
            self.n_unstable += 1
        elif new == PLATEAU:
            self.plateau[self.n_plateau] = i
            self.plateau_pos[i] = self.n_plateau
            self.n_plateau += 1
        self.kind[i] = new

    cdef inline uint64_t _next(self):
        cdef uint64_t x = self.rng
        x ^= x >> 12
        x ^= x << 25
        x ^= x >> 27
        self.rng = x
        return x * <uint64_t>0x2545F4914F6CDD1D

    cdef inline int64_t _pick(self, int64_t n):
        return <int64_t>((self._next() >> 11) % <uint64_t>n)

    cdef void _flip(self, int64_t j):
        cdef unsigned char old = self.y[j]
        cdef int64_t a, s, k, i, zn, start, stop
        cdef double ws
        self.y[j] = 1 - old
        for a in range(self.unit_ptr[j], self.unit_ptr[j + 1]):
            s = self.unit_conns[a]
            start = self.conn_ptr[s]
            stop = self.conn_ptr[s + 1]
            ws = self.w[s]
            if old == 0:
                self.zeros[s] -= 1
                zn = self.zeros[s]
                if zn == 0:
                    for k in range(start, stop):
                        i = self.conn_units[k]
                        if i != j:
                            self.z[i] += ws
                            self._reclassify(i)
                elif zn == 1:
                    for k in range(start, stop):
                        i = self.conn_units[k]
                        if self.y[i] == 0:
                            self.z[i] += ws
                            self._reclassify(i)
                            break
            else:
                self.zeros[s] += 1
                zn = self.zeros[s]
                if zn == 1:
                    for k in range(start, stop):
                        i = self.conn_units[k]
                        if i != j:
                            self.z[i] -= ws
                            self._reclassify(i)
                elif zn == 2:
                    for k in range(start, stop):
                        i = self.conn_units[k]
                        if i != j and self.y[i] == 0:
                            self.z[i] -= ws
                            self._reclassify(i)
                            break
        self._reclassify(j)

    def flip(self, int64_t j):
        self._flip(j)

    def converge(self, int64_t max_random_flips, int64_t max_flips, uint64_t seed):
        """Flip until no unit is unstable and the plateau walk is exhausted.

        Returns ``(must_flips, random_flips, budget_exceeded)``.
        """
        cdef int64_t must = 0, rand = 0, consecutive = 0, i
        self.rng = seed if seed != 0 else 1
        while True:
            while self.n_unstable > 0:
                if must + rand >= max_flips:
                    return must, rand, True
                i = self.unstable[self._pick(self.n_unstable)]
                self._flip(i)
                must += 1
                consecutive = 0
            if consecutive >= max_random_flips or self.n_plateau == 0:
                return must, rand, False
            if must + rand >= max_flips:
                return must, rand, True
            i = self.plateau[self._pick(self.n_plateau)]
            self._flip(i)
            rand += 1
            consecutive += 1

    def add_weights(self, conn_ids, deltas):
        """Add ``deltas`` to the given connections and update inputs in place."""
        cdef int64_t[::1] ids = np.ascontiguousarray(conn_ids, dtype=np.int64)
        cdef double[::1] ds = np.ascontiguousarray(deltas, dtype=np.float64)
        cdef int64_t a, s, k, i, nz
        cdef double d
        for a in range(ids.shape[0]):
            s = ids[a]
            d = ds[a]
            self.w[s] += d
            nz = self.zeros[s]
            if nz > 1:
                continue
            for k in range(self.conn_ptr[s], self.conn_ptr[s + 1]):
                i = self.conn_units[k]
                if nz - (1 - self.y[i]) == 0:
                    self.z[i] += d
                    self._reclassify(i)

    def energy(self):
        cdef int64_t s
        cdef double e = 0.0
        for s in range(self.zeros.shape[0]):
            if self.zeros[s] == 0:
                e -= self.w[s]
        return e
