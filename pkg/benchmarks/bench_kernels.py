"""Time the numba kernels against their numpy fallbacks and check they agree.

    python3 benchmarks/bench_kernels.py [--d 400] [--repeat 5]
"""
import argparse
import time

import numpy as np

from scalelab import _kernels as K


def _best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_cd_gram(d, repeat):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2 * d, d)) / np.sqrt(d)
    G = np.ascontiguousarray(x.T @ x)
    b = x.T @ rng.standard_normal(2 * d)
    idx = np.arange(d, dtype=np.int64)

    def run(fn):
        theta = np.zeros(d)
        c = b.copy()
        fn(G, theta, c, 0.1, idx, 20)
        return theta

    K.cd_gram_numba(G, np.zeros(d), b.copy(), 0.1, idx, 1)  # compile
    t_np, th_np = _best(lambda: run(K.cd_gram_numpy), repeat)
    t_nb, th_nb = _best(lambda: run(K.cd_gram_numba), repeat)
    return "cd_gram", t_np, t_nb, float(np.max(np.abs(th_np - th_nb)))


def bench_cd_resid(d, repeat):
    rng = np.random.default_rng(1)
    n = d // 2
    xs = np.asfortranarray(rng.standard_normal((n, d)) / np.sqrt(d))
    col_sq = np.einsum("ij,ij->j", xs, xs)
    y = rng.standard_normal(n)
    idx = np.arange(d, dtype=np.int64)

    def run(fn):
        theta = np.zeros(d)
        r = y.copy()
        fn(xs, col_sq, theta, r, 0.05, idx, 20)
        return theta

    K.cd_resid_numba(xs, col_sq, np.zeros(d), y.copy(), 0.05, idx, 1)
    t_np, th_np = _best(lambda: run(K.cd_resid_numpy), repeat)
    t_nb, th_nb = _best(lambda: run(K.cd_resid_numba), repeat)
    return "cd_resid", t_np, t_nb, float(np.max(np.abs(th_np - th_nb)))


def bench_pair_divergence(d, repeat):
    rng = np.random.default_rng(2)
    x = np.sort(rng.standard_normal(d))
    fx = np.maximum(x - 0.3, 0.0)
    dfx = (x > 0.3).astype(float)
    K.pair_divergence_numba(x, fx, dfx, 1e-12)
    t_np, v_np = _best(lambda: K.pair_divergence_numpy(x, fx, dfx), repeat)
    t_nb, v_nb = _best(lambda: K.pair_divergence_numba(x, fx, dfx, 1e-12), repeat)
    return "pair_divergence", t_np, t_nb, abs(v_np - v_nb) / max(abs(v_np), 1.0)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=400)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    print(f"{'kernel':<16} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8} {'max diff':>10}")
    rows = [bench_cd_gram(args.d, args.repeat), bench_cd_resid(args.d, args.repeat),
            bench_pair_divergence(args.d, args.repeat)]
    for name, t_np, t_nb, diff in rows:
        print(f"{name:<16} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:8.1f} {diff:10.2e}")
    return rows


if __name__ == "__main__":
    main()
