"""Nighttime video deraining: conditional video diffusion with a transformer
noise estimator, plus unsupervised teacher-student fine-tuning (confidence
gated rain removal and clear-video error correction)."""

def _cap_threads():
    # NIGHTRAIN_THREADS caps BLAS/OpenMP workers; must land before numpy
    # loads, so it runs at package import. Explicit per-library vars win.
    import os

    threads = os.environ.get("NIGHTRAIN_THREADS")
    if threads:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


_cap_threads()
del _cap_threads

__version__ = "0.1.0"
