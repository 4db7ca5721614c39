"""Time the compiled and pure-Python flip kernels on the same workload.

Both backends run the identical flip sequence (shared seed stream), so the
timings compare implementation speed only.  Usage::

    python benchmarks/bench_kernel.py --objects 6 --steps 7 --repeats 5
"""

import argparse
import time

import numpy as np

from consat import blockworld as bw
from consat import consyn
from consat.kernel import CFlipKernel, PyFlipKernel


def workload(objects, steps, seed):
    bounds = bw.Bounds(objects, steps)
    cnf = bw.ground(bounds)
    index = bw.build_index(bounds)
    rng = np.random.default_rng(seed)
    inst = bw.generate_instance(rng, min(3, bounds.max_blocks), bounds)
    net = consyn.compile_network(cnf)
    y = consyn.random_start(cnf.num_vars, bw.clamp_literals(inst, index), rng)
    return net, y


def run(kernel_cls, net, y, max_random_flips, seed):
    kern = net.kernel(y.clamped, backend=kernel_cls)
    start = time.perf_counter()
    kern.set_state(y.values.astype(np.uint8))
    must, rand, _ = kern.converge(max_random_flips, 10_000_000, seed)
    elapsed = time.perf_counter() - start
    return elapsed, must + rand, kern.y_values.copy()


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--objects", type=int, default=6)
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--max-random-flips", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    net, y = workload(args.objects, args.steps, args.seed)
    backends = [("python", PyFlipKernel)]
    if CFlipKernel is not None:
        backends.insert(0, ("cython", CFlipKernel))
    else:
        print("compiled kernel unavailable; timing the Python backend only")

    print(f"{net.num_units} units, {len(net.connections)} connections")
    results = {}
    for name, cls in backends:
        times, final = [], None
        for r in range(args.repeats):
            elapsed, flips, state = run(cls, net, y, args.max_random_flips, args.seed + r + 1)
            times.append(elapsed)
            final = (flips, state) if final is None else final
        results[name] = (np.median(times), final)
        print(f"{name:7s} median {np.median(times) * 1e3:9.2f} ms  "
              f"({final[0]} flips, {final[0] / np.median(times):,.0f} flips/s)")
    if len(results) == 2:
        (tc, (fc, sc)), (tp, (fp, sp)) = results["cython"], results["python"]
        same = fc == fp and np.array_equal(sc, sp)
        print(f"speedup {tp / tc:.1f}x; identical flip sequences: {same}")


if __name__ == "__main__":
    main()
