"""snowfuse: multi-source snow-water-equivalent estimation on a 1 km grid.

Raster ingestion, per-source feature derivation, a late-fusion neural
regressor trained with Adam, Gaussian post-smoothing, and an evaluation
harness with reference baselines. A synthetic scene generator produces
end-to-end verifiable data in the same formats as real ingestion.

The SNOWFUSE_THREADS environment variable caps the linear-algebra thread
pools (default 1: runs are reproducible and benchmarks honest).  It must
be decided before numpy first loads, which importing this package does,
so set it before any snowfuse or numpy import.
"""

import os as _os

_threads = _os.environ.get("SNOWFUSE_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
