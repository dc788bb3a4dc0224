"""Benchmark the compiled kernels against the numpy fallback.

Runs the operator assembly and the per-slot flux evaluation on a range
of meshes with both backends and prints a timing table::

    python3 benchmarks/bench_kernels.py [--repeat 5]

The two backends are imported directly, so the comparison works no
matter which one the package selected at import time.
"""

import argparse
import time

import numpy as np

from vgs._kernels import _numpy
from vgs.cases import build_family_mesh

try:
    from vgs._kernels import _compiled
except ImportError:  # pragma: no cover - extension not built
    _compiled = None


def _best_of(repeat, fn, *args):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeat: int) -> None:
    if _compiled is None:
        raise SystemExit("compiled kernel extension is not built; "
                         "reinstall the package to compile it")
    rng = np.random.default_rng(0)
    print(f"{'mesh':>16} {'kernel':>12} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for family, n in (("tri", 40), ("hex", 40), ("kershaw", 60)):
        mesh = build_family_mesh(family, n)
        ucell = rng.standard_normal(mesh.n_cells)
        uface = rng.standard_normal(mesh.n_faces)
        lam = np.tile(np.array([[1.5, 0.3], [0.3, 0.9]]), (mesh.n_cells, 1, 1))
        m = mesh
        asm_args = (m.cell_face_offsets, m.cell_face_ids, m.face_area, m.dist,
                    m.normal, m.face_centroid, m.cell_volume, m.cell_centre,
                    lam, 1.75)
        flux_args = asm_args + (ucell, uface)
        label = f"{family} n={n}"
        for kernel, args in (("assemble_coo", asm_args), ("fluxes", flux_args)):
            t_np = _best_of(repeat, getattr(_numpy, kernel), *args)
            t_cy = _best_of(repeat, getattr(_compiled, kernel), *args)
            print(f"{label:>16} {kernel:>12} {t_np * 1e3:9.2f}ms {t_cy * 1e3:9.2f}ms "
                  f"{t_np / t_cy:7.1f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5,
                        help="timing repetitions per entry (best is reported)")
    run(parser.parse_args().repeat)
