"""Console entry point.

Resolves the CHANCECTL_THREADS environment variable into the BLAS/OpenMP
thread-count variables before numpy is imported, then defers to the
harness.
"""

import os
import sys


def main(argv=None) -> int:
    threads = os.environ.get("CHANCECTL_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    from .harness import cli_main

    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
