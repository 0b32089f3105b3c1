"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--width 50] [--repeat 5]

Times point and interval batches on a merged network and one Moore-Skelboe
run, for every available backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from quantcert.interval import Box
from quantcert.kernels import AVAILABLE, PreparedNetwork
from quantcert.merge import merge
from quantcert.network import random_network
from quantcert.quantization import QuantizationScheme, quantize_network
from quantcert.solver import moore_skelboe


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--width", type=int, default=50)
    ap.add_argument("--batch", type=int, default=2048)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--ms-width", type=int, default=10)
    ap.add_argument("--ms-eps", type=float, default=1e-4)
    args = ap.parse_args()

    w = args.width
    phi = random_network([1, w, w, w, 1], "relu", 7)
    m = merge(phi, quantize_network(phi, QuantizationScheme.truncation(4)))
    rng = np.random.default_rng(0)
    lo = np.sort(rng.random((args.batch, 2)), axis=1)
    LO, HI = lo[:, :1].copy(), lo[:, 1:].copy()

    ms_phi = random_network([1, args.ms_width, args.ms_width, args.ms_width, 1], "relu", 7)
    ms_net = merge(ms_phi, quantize_network(ms_phi, QuantizationScheme.truncation(4)))

    print(f"merged network {m.net.dims}, batch {args.batch}, best of {args.repeat}")
    print(f"{'backend':>9} {'point us/row':>13} {'interval us/box':>16} {'MS boxes':>9} {'MS s':>7}")
    results = {}
    for backend in AVAILABLE:
        prep = PreparedNetwork(m.net, backend)
        tp = best_of(lambda: prep.point_batch(LO), args.repeat) / args.batch * 1e6
        ti = best_of(lambda: prep.interval_batch(LO, HI, 1e-12), args.repeat) / args.batch * 1e6
        cert = moore_skelboe(ms_net, Box([0.0], [1.0]), eps=args.ms_eps, backend=backend)
        results[backend] = (tp, ti, cert.stats.wall_time)
        print(f"{backend:>9} {tp:13.2f} {ti:16.2f} {cert.stats.boxes_processed:9d} {cert.stats.wall_time:7.2f}")
    if len(results) == 2:
        (cp, ci, cm), (pp, pi, pm) = results["compiled"], results["python"]
        print(f"speed-up compiled/python: point {pp / cp:.1f}x, interval {pi / ci:.1f}x, search {pm / cm:.1f}x")


if __name__ == "__main__":
    main()
