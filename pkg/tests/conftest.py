import os

# pin BLAS threading before numpy is imported anywhere: faster on this
# workload's small matrices and independent of the host's core count
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
