"""Pure-Python flip kernel, used when the compiled extension is unavailable.

Operation-for-operation twin of ``_kernel.pyx``; the two must stay in step
so that a seed yields the same flip sequence on either backend.
"""

import numpy as np

STABLE, UNSTABLE, PLATEAU = 0, 1, 2
_MASK = (1 << 64) - 1


class FlipKernel:
    def __init__(self, conn_ptr, conn_units, unit_ptr, unit_conns, weights, clamped, tol=1e-9):
        self.conn_ptr = [int(x) for x in conn_ptr]
        self.conn_units = [int(x) for x in conn_units]
        self.unit_ptr = [int(x) for x in unit_ptr]
        self.unit_conns = [int(x) for x in unit_conns]
        self.members = [
            self.conn_units[self.conn_ptr[s]:self.conn_ptr[s + 1]]
            for s in range(len(self.conn_ptr) - 1)
        ]
        self.incident = [
            self.unit_conns[self.unit_ptr[i]:self.unit_ptr[i + 1]]
            for i in range(len(self.unit_ptr) - 1)
        ]
        self.weights_array = weights
        self.num_units = n = len(self.unit_ptr) - 1
        self.set_clamped(clamped)
        self.y = [0] * n
        self.z = [0.0] * n
        self.zeros = [0] * len(self.members)
        self.unstable, self.unstable_pos = [], [-1] * n
        self.plateau, self.plateau_pos = [], [-1] * n
        self.kind = [STABLE] * n
        self.tol = tol
        self.rng = 1

    @property
    def y_values(self):
        return np.asarray(self.y, dtype=np.uint8)

    @property
    def z_values(self):
        return np.asarray(self.z, dtype=np.float64)

    @property
    def unstable_count(self):
        return len(self.unstable)

    @property
    def plateau_count(self):
        return len(self.plateau)

    def set_clamped(self, clamped):
        self.clamped = [bool(x) for x in np.asarray(clamped)]

    def set_state(self, y):
        self.y = [int(v) for v in np.asarray(y, dtype=np.uint8)]
        self.recompute()

    def recompute(self):
        w, y = self.weights_array, self.y
        z = [0.0] * self.num_units
        for s, units in enumerate(self.members):
            nz = sum(1 for i in units if y[i] == 0)
            self.zeros[s] = nz
            if nz > 1:
                continue
            ws = float(w[s])
            for i in units:
                if nz - (1 - y[i]) == 0:
                    z[i] += ws
        self.z = z
        self.unstable, self.unstable_pos = [], [-1] * self.num_units
        self.plateau, self.plateau_pos = [], [-1] * self.num_units
        self.kind = [STABLE] * self.num_units
        for i in range(self.num_units):
            self._reclassify(i)

    def _classify(self, i):
        if self.clamped[i]:
            return STABLE
        zi = self.z[i]
        if zi > self.tol:
            return UNSTABLE if self.y[i] == 0 else STABLE
        if zi < -self.tol:
            return UNSTABLE if self.y[i] == 1 else STABLE
        return PLATEAU

    def _reclassify(self, i):
        new, old = self._classify(i), self.kind[i]
        if new == old:
            return
        if old == UNSTABLE:
            self._remove(self.unstable, self.unstable_pos, i)
        elif old == PLATEAU:
            self._remove(self.plateau, self.plateau_pos, i)
        if new == UNSTABLE:
            self.unstable_pos[i] = len(self.unstable)
            self.unstable.append(i)
        elif new == PLATEAU:
            self.plateau_pos[i] = len(self.plateau)
            self.plateau.append(i)
        self.kind[i] = new

    @staticmethod
    def _remove(items, pos, i):
        p = pos[i]
        last = items[-1]
        items[p] = last
        pos[last] = p
        items.pop()
        pos[i] = -1

    def _next(self):
        x = self.rng
        x ^= x >> 12
        x ^= (x << 25) & _MASK
        x ^= x >> 27
        self.rng = x
        return (x * 0x2545F4914F6CDD1D) & _MASK

    def _pick(self, n):
        return (self._next() >> 11) % n

    def flip(self, j):
        y, z, w, zeros = self.y, self.z, self.weights_array, self.zeros
        old = y[j]
        y[j] = 1 - old
        for s in self.incident[j]:
            units = self.members[s]
            ws = float(w[s])
            if old == 0:
                zeros[s] -= 1
                zn = zeros[s]
                if zn == 0:
                    for i in units:
                        if i != j:
                            z[i] += ws
                            self._reclassify(i)
                elif zn == 1:
                    for i in units:
                        if y[i] == 0:
                            z[i] += ws
                            self._reclassify(i)
                            break
            else:
                zeros[s] += 1
                zn = zeros[s]
                if zn == 1:
                    for i in units:
                        if i != j:
                            z[i] -= ws
                            self._reclassify(i)
                elif zn == 2:
                    for i in units:
                        if i != j and y[i] == 0:
                            z[i] -= ws
                            self._reclassify(i)
                            break
        self._reclassify(j)

    def converge(self, max_random_flips, max_flips, seed):
        must = rand = consecutive = 0
        self.rng = int(seed) & _MASK or 1
        while True:
            while self.unstable:
                if must + rand >= max_flips:
                    return must, rand, True
                self.flip(self.unstable[self._pick(len(self.unstable))])
                must += 1
                consecutive = 0
            if consecutive >= max_random_flips or not self.plateau:
                return must, rand, False
            if must + rand >= max_flips:
                return must, rand, True
            self.flip(self.plateau[self._pick(len(self.plateau))])
            rand += 1
            consecutive += 1

    def add_weights(self, conn_ids, deltas):
        w, y, z = self.weights_array, self.y, self.z
        for s, d in zip(np.asarray(conn_ids, dtype=np.int64), np.asarray(deltas, dtype=np.float64)):
            s, d = int(s), float(d)
            w[s] += d
            nz = self.zeros[s]
            if nz > 1:
                continue
            for i in self.members[s]:
                if nz - (1 - y[i]) == 0:
                    z[i] += d
                    self._reclassify(i)

    def energy(self):
        w = self.weights_array
        return -sum(float(w[s]) for s, nz in enumerate(self.zeros) if nz == 0)
