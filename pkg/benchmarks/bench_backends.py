"""Compare the numba kernels against the pure-numpy fallback.

The backend is chosen at import time from SEMFOAM_NUMBA, so each backend
runs in its own subprocess.  The workload is the hot path of a training
iteration: trace + composite a full image forward and backward.

Usage: python benchmarks/bench_backends.py [--sites 1500] [--size 64]
       [--repeats 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from semfoam import backend
from semfoam.geometry import build_delaunay
from semfoam.renderer import GradientBuffer, render_backward, render_rays
from semfoam.scene import init_scene
from semfoam.synth import generate_synthetic

sites, size, repeats = (int(v) for v in sys.argv[1:4])
ds, spec = generate_synthetic("three_objects", seed=0, n_train=1, n_val=0,
                              n_test=1, size=size, n_points=sites)
rng = np.random.default_rng(0)
scene = init_scene(spec.box, rng, n_sites=sites, sh_degree=1, id_dim=16,
                   n_classes=4, init_positions=ds.points)
scene.raw_density[:] = rng.standard_normal(sites)
tri = build_delaunay(scene.positions, scene.box)
origins, dirs = ds.cameras[0].pixel_rays()

def step():
    batch = render_rays(scene, tri, origins, dirs)
    grads = GradientBuffer.zeros_like(scene)
    render_backward(scene, batch,
                    np.sign(batch.output.rgb - 0.5),
                    np.sign(batch.output.alpha - 0.5),
                    np.ones_like(batch.output.identity),
                    grads, stop_density=True)
    return batch, grads

step()  # warmup (jit compilation for the numba backend)
times = []
for _ in range(repeats):
    t0 = time.perf_counter()
    batch, grads = step()
    times.append(time.perf_counter() - t0)
print(json.dumps({
    "backend": "numba" if backend.NUMBA_ENABLED else "numpy",
    "best_s": min(times),
    "mean_s": sum(times) / len(times),
    "checksum": float(np.abs(batch.output.rgb).sum() + np.abs(grads.d_density).sum()),
}))
"""


def run_backend(numba_flag: str, args) -> dict:
    env = {**os.environ, "SEMFOAM_NUMBA": numba_flag}
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(args.sites), str(args.size),
         str(args.repeats)],
        capture_output=True, text=True, env=env, check=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sites", type=int, default=1500)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    results = [run_backend(flag, args) for flag in ("1", "0")]
    for r in results:
        print(f"{r['backend']:>6}: best {r['best_s']*1e3:8.1f} ms  "
              f"mean {r['mean_s']*1e3:8.1f} ms  (checksum {r['checksum']:.6f})")
    a, b = results
    if abs(a["checksum"] - b["checksum"]) > 1e-6 * max(abs(a["checksum"]), 1.0):
        print("warning: backends disagree on the workload checksum")
        return 1
    print(f"speedup: {b['best_s'] / a['best_s']:.1f}x "
          f"({a['backend']} over {b['backend']})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
