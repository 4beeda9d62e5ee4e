"""Smoke test for the heatsc Python extension.

Builds the extension with cargo (unless HEATSC_SKIP_BUILD is set), copies the
shared library next to this script as an importable module and exercises the
main entry points against closed-form values.
"""

import json
import math
import os
import shutil
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
HERE = Path(__file__).resolve().parent


def build_module() -> None:
    if not os.environ.get("HEATSC_SKIP_BUILD"):
        subprocess.run(["cargo", "build", "--release", "-p", "heatsc-py"], cwd=ROOT, check=True)
    suffix = {"darwin": "dylib", "win32": "dll"}.get(sys.platform, "so")
    lib = ROOT / "target" / "release" / f"libheatsc_py.{suffix}"
    if sys.platform == "win32":
        lib = ROOT / "target" / "release" / "heatsc_py.dll"
    target = HERE / ("heatsc.pyd" if sys.platform == "win32" else "heatsc.so")
    shutil.copyfile(lib, target)
    sys.path.insert(0, str(HERE))


def close(a: float, b: float, tol: float) -> None:
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main() -> None:
    build_module()
    import heatsc

    sphere = heatsc.Manifold.round_sphere(1.0)
    close(sphere.volume, 4 * math.pi, 1e-12)
    close(sphere.g_function(0.5), 0.5 * (1 - 0.5 / math.tan(0.5)), 1e-14)
    close(sphere.ball_volume(0.3), 2 * math.pi * (1 - math.cos(0.3)), 1e-13)
    close(sphere.distance([0, 0, 1], [1, 0, 0]), math.pi / 2, 1e-14)

    free = json.dumps({"rank": 1, "kind": "constant", "data": {"matrix": 0.0}})
    op = heatsc.Operator(sphere, free)
    y = [0.2, -0.3, 0.9]
    close(op.phi(0, y, y, 1.0)[0][0], 1.0, 1e-14)
    close(op.phi(1, y, y, 1.0)[0][0], 1.0 / 3.0, 1e-6)

    oracle = op.oracle(0.1, 1.0)
    assert oracle.mode == "exact"
    for got, want in zip(oracle.eigenvalues(4), [0.0, 0.02, 0.02, 0.02]):
        close(got, want, 1e-15)
    ratio = oracle.trace(1.0) / op.z_classical(1.0, 0.1)
    close(ratio, 1 + 0.01 / 3 + 1e-4 / 15, 1e-7)
    k = oracle.heat_kernel(y, y, 1.0)[0][0]
    khat = op.parametrix(y, y, 1.0, 0.1, order=1)[0][0]
    close(khat / k, 1.0, 1e-4)

    circle = heatsc.Manifold.circle(1.0)
    cosine = json.dumps(
        {"rank": 1, "kind": "fourier", "data": {"terms": [{"k": [0], "cos": 1.0}, {"k": [1], "cos": 1.0}]}}
    )
    op = heatsc.Operator(circle, cosine)
    close(op.potential_at([0.0])[0][0], 2.0, 1e-15)
    gal = op.oracle(0.2, 1.0)
    assert gal.mode == "galerkin"
    samples = [(h, op.oracle(h, 1.0).trace(1.0)) for h in (0.1, 0.08, 0.06, 0.045, 0.0316)]
    a, stderr = heatsc.fit_heat_coefficients(samples, 1.0, 1, 2)
    # a_0 = int_0^{2 pi} e^{-(1 + cos x)} dx = 2 pi e^{-1} I_0(1)
    i0 = sum(0.25**k / math.factorial(k) ** 2 for k in range(30))
    close(a[0], 2 * math.pi * math.exp(-1) * i0, 1e-6)
    assert len(stderr) == 3

    constants = json.loads(heatsc.bound_constants(2.0, 1.0, 0.0, 0.0, 0.0, 2))
    close(constants["c1"], 16 * math.e**3, 1e-9)

    lhs, rhs, holds = heatsc.golden_thompson([[1.0, 0.5], [0.5, -0.2]], [[0.3, -0.4], [-0.4, 2.0]])
    assert holds and lhs <= rhs
    _, _, holds = heatsc.trace_product_bound([[1.0, 2.0], [0.0, -1.0]], [[2.0, 0.5], [0.5, 1.0]])
    assert holds

    try:
        heatsc.Manifold.circle(-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative radius accepted")

    print("heatsc smoke test passed")


if __name__ == "__main__":
    main()
