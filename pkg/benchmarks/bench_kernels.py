"""Benchmark the image-QC kernels: compiled extension vs NumPy fallback.

Usage::

    python benchmarks/bench_kernels.py [--sizes 128,256] [--repeat 30]

Times grayscale conversion, the 64-bit perceptual hash, SSIM against white,
and gradient energy on synthetic panels, and prints the per-call time of
each backend plus the speedup. Also asserts that both backends agree on
every input (hash bits exactly; SSIM within 1e-9; energy within 1e-12).
"""

import argparse
import time

import numpy as np

from puzzlegen import kernels


def synthetic_panel(size: int, seed: int) -> np.ndarray:
    """A panel-like image: white background, a few dark discs, mild noise."""
    rng = np.random.default_rng(seed)
    ax = np.arange(size) + 0.5
    X, Y = np.meshgrid(ax, ax)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(2, 6))):
        cx, cy = rng.uniform(0.2, 0.8, 2) * size
        r = rng.uniform(0.05, 0.12) * size
        mask |= (X - cx) ** 2 + (Y - cy) ** 2 <= r * r
    img = np.where(mask[..., None], 20, 245).astype(np.int16)
    img = img + rng.integers(-6, 7, size=(size, size, 1), dtype=np.int16)
    return np.clip(img, 0, 255).astype(np.uint8).repeat(3, axis=2)[:, :, :3]


def time_call(fn, args, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="128,256")
    parser.add_argument("--repeat", type=int, default=30)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not available; only the numpy backend will run")
    print(f"backends: {', '.join(backends)}    active: {kernels.BACKEND}\n")

    header = f"{'op':<16}{'size':>6}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for size in sizes:
        panels = [synthetic_panel(size, seed) for seed in range(4)]
        grays = {name: [mod.grayscale(p) for p in panels] for name, mod in backends.items()}

        # cross-backend agreement before timing
        names = list(backends)
        if len(names) == 2:
            a, b = names
            for ga, gb in zip(grays[a], grays[b]):
                assert backends[a].phash64(ga) == backends[b].phash64(gb)
                assert abs(backends[a].ssim_vs_white(ga) - backends[b].ssim_vs_white(gb)) < 1e-9
                assert abs(backends[a].gradient_energy(ga) - backends[b].gradient_energy(gb)) < 1e-12

        ops = {
            "grayscale": lambda mod, name: time_call(mod.grayscale, (panels[0],), args.repeat),
            "phash64": lambda mod, name: time_call(mod.phash64, (grays[name][0],), args.repeat),
            "ssim_vs_white": lambda mod, name: time_call(mod.ssim_vs_white, (grays[name][0],), args.repeat),
            "gradient_energy": lambda mod, name: time_call(mod.gradient_energy, (grays[name][0],), args.repeat),
        }
        for op, runner in ops.items():
            times = {name: runner(mod, name) for name, mod in backends.items()}
            row = f"{op:<16}{size:>6}" + "".join(f"{times[n] * 1e6:>12.1f}us" for n in backends)
            if len(times) == 2:
                row += f"{times['numpy'] / times['cython']:>9.2f}x"
            print(row)
        print()


if __name__ == "__main__":
    main()
