"""plugbench: planar connector-insertion simulator and behavioral-cloning pipeline."""

import os as _os
import sys as _sys

# Single-threaded BLAS: faster on this workload's small matrices and keeps
# results independent of the host's thread count.  The env vars cover the
# usual case (numpy not yet imported); if something imported numpy first,
# pin the already-loaded OpenBLAS at runtime instead.
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
_os.environ.setdefault("OMP_NUM_THREADS", "1")


def _pin_loaded_blas() -> None:
    if "numpy" not in _sys.modules:
        return
    try:
        import ctypes
        paths = set()
        with open("/proc/self/maps") as f:
            for line in f:
                parts = line.split()
                if len(parts) >= 6 and "openblas" in parts[-1].lower():
                    paths.add(parts[-1])
        for path in paths:
            lib = ctypes.CDLL(path)
            for name in ("openblas_set_num_threads",
                         "openblas_set_num_threads64_",
                         "scipy_openblas64_set_num_threads"):
                fn = getattr(lib, name, None)
                if fn is not None:
                    fn(1)
                    break
    except Exception:
        pass  # non-Linux or unexpected layout: env vars still apply


_pin_loaded_blas()

__version__ = "0.1.0"
