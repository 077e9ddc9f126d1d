import json
import os
import subprocess
import sys

import numpy as np
import pytest

from tilegeo import _backend, _kernels_py

SNIPPET = """
import json
import numpy as np
from tilegeo import _backend
from tilegeo.geometry import random_locations
from tilegeo.kernel import MaternParams
from tilegeo.likelihood import ComputeBackend
from tilegeo.simulate import SimulationSpec, simulate_at
from tilegeo.likelihood import log_likelihood
p = MaternParams(1.0, 0.1, 1.3)
field = simulate_at(SimulationSpec(p, random_locations(200, 2), 2, ComputeBackend.exact(tile_size=64)))
print(json.dumps({"compiled": _backend.COMPILED, "z": field.z.tolist(),
                  "ll": log_likelihood(field, p, ComputeBackend.exact(tile_size=64))}))
"""


def run_snippet(pure):
    env = dict(os.environ, TILEGEO_PURE_PYTHON="1" if pure else "0")
    proc = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def test_environment_forces_fallback():
    assert run_snippet(True)["compiled"] is False


@pytest.mark.skipif(not _backend.COMPILED, reason="compiled extension not built")
def test_fallback_matches_compiled():
    fast, slow = run_snippet(False), run_snippet(True)
    assert fast["compiled"] is True
    assert np.allclose(fast["z"], slow["z"], rtol=0, atol=1e-12)
    assert abs(fast["ll"] - slow["ll"]) <= 1e-10 * abs(slow["ll"])


@pytest.mark.skipif(not _backend.COMPILED, reason="compiled extension not built")
@pytest.mark.parametrize("name", ["potrf_tile", "trsm_tile", "syrk_tile", "gemm_tile"])
def test_tile_kernels_agree(name):
    rng = np.random.default_rng(0)
    m = rng.normal(size=(30, 30))
    spd = np.asfortranarray(m @ m.T + 30 * np.eye(30))
    low = np.asfortranarray(np.linalg.cholesky(spd))
    args = {
        "potrf_tile": lambda: (spd.copy(order="F"),),
        "trsm_tile": lambda: (low, np.asfortranarray(rng.normal(size=(30, 30)))),
        "syrk_tile": lambda: (np.asfortranarray(m), spd.copy(order="F")),
        "gemm_tile": lambda: (np.asfortranarray(m), np.asfortranarray(m.T), spd.copy(order="F")),
    }[name]()
    a = [x.copy(order="F") for x in args]
    b = [x.copy(order="F") for x in args]
    getattr(_backend.kernels, name)(*a)
    getattr(_kernels_py, name)(*b)
    out = -1
    if name == "syrk_tile":
        assert np.allclose(np.tril(a[out]), np.tril(b[out]), rtol=1e-13, atol=1e-12)
    else:
        assert np.allclose(a[out], b[out], rtol=1e-13, atol=1e-12)
