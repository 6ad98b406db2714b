"""Compare the compiled and pure-Python kernels, alone and inside the filter.

Reports the best of several repeats, since single timings on a shared
machine are noisy.  Per-step times are the per-run time divided by the
number of steps.

    python benchmarks/bench_kernels.py [--repeats 7] [--opt] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import time
import timeit

import numpy as np

from dynekf import backend_opt, backend_std, kernels, sim
from dynekf.models import NoiseModel
from dynekf.state import FilterConfig


def kernel_inputs(n_features: int = 40, dim: int = 146, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    x = np.array([10.0, -2.0, 0.3])
    F = rng.uniform(-50, 50, size=(n_features, 2))
    Z = rng.uniform(-50, 50, size=(n_features, 2))
    a = rng.normal(size=(dim, dim))
    P = a @ a.T / dim + np.eye(dim)
    xi = np.arange(3)
    fi = 3 + np.arange(2 * n_features).reshape(-1, 2)
    _, Hx, Hf = kernels.get("python").measure_batch(x, F)
    R = np.kron(np.eye(n_features), 1e-4 * np.eye(2))
    PHt = kernels.get("python").cov_times_ht(P, xi, fi, Hx, Hf)
    f0 = rng.normal(size=(4, 2))
    ft = f0 @ np.array([[0.9, -0.2], [0.2, 0.9]]) + 1.0
    return {
        "measure_batch": (x, F),
        "inverse_measure_batch": (x, Z),
        "cov_times_ht": (P, xi, fi, Hx, Hf),
        "innovation_cov": (PHt, xi, fi, Hx, Hf, R),
        "procrustes": (f0, ft),
    }


def bench_kernels(repeats: int) -> dict:
    inputs = kernel_inputs()
    out = {}
    for impl in sorted(kernels.IMPLEMENTATIONS):
        mod = kernels.get(impl)
        for name, args in inputs.items():
            fn = getattr(mod, name)
            number = 200
            best = min(timeit.repeat(lambda fn=fn, args=args: fn(*args), number=number, repeat=repeats))
            out.setdefault(name, {})[impl] = best / number
    return out


def _time_run(module, prior, frames, config) -> float:
    carrier = module.init(prior[0], prior[1], config)
    t0 = time.perf_counter()
    for frame in frames:
        carrier = module.step(carrier, frame)
    return time.perf_counter() - t0


def bench_filter(repeats: int, with_opt: bool) -> dict:
    scenario = sim.build_scenario(0)
    noise = NoiseModel.from_levels(1, 1)
    seed = sim.run_seeds(0, 1)[0]
    frames = sim.simulate_frames(scenario, noise, seed)
    prior = sim.sample_prior(scenario, noise, seed)
    config = FilterConfig(noise)
    out = {"steps": len(frames)}
    previous = kernels.BACKEND
    try:
        for impl in sorted(kernels.IMPLEMENTATIONS):
            kernels.select(impl)
            runs = [_time_run(backend_std, prior, frames, config) for _ in range(repeats)]
            out[f"std/{impl}"] = {"run_s": min(runs), "step_s": min(runs) / len(frames), "median_run_s": float(np.median(runs))}
        if with_opt:
            kernels.select(previous)
            runs = [_time_run(backend_opt, prior, frames, config) for _ in range(max(1, repeats // 3))]
            out[f"opt/{previous}"] = {"run_s": min(runs), "step_s": min(runs) / len(frames), "median_run_s": float(np.median(runs))}
    finally:
        kernels.select(previous)
    return out


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=7)
    p.add_argument("--opt", action="store_true", help="also time the optimization backend")
    p.add_argument("--json", help="write results to this file")
    args = p.parse_args(argv)

    ks = bench_kernels(args.repeats)
    print(f"{'kernel':24s}" + "".join(f"{impl:>12s}" for impl in sorted(kernels.IMPLEMENTATIONS)) + "   speedup")
    for name, by_impl in ks.items():
        row = "".join(f"{1e6 * by_impl[impl]:10.1f}us" for impl in sorted(by_impl))
        speed = by_impl["python"] / by_impl["cython"] if "cython" in by_impl else float("nan")
        print(f"{name:24s}{row}   {speed:6.1f}x")

    fs = bench_filter(args.repeats, args.opt)
    print(f"\nfull scenario, {fs['steps']} steps, best of {args.repeats}:")
    for name, r in fs.items():
        if name == "steps":
            continue
        print(f"  {name:16s} run {1e3 * r['run_s']:8.1f} ms   step {1e3 * r['step_s']:6.3f} ms   median run {1e3 * r['median_run_s']:8.1f} ms")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"kernels": ks, "filter": fs}, fh, indent=2)


if __name__ == "__main__":
    main()
