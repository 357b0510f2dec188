"""Learned AMG prolongations for graph Laplacians and diffusion problems."""

import numpy as np
import scipy.sparse as sp

from . import _core
from ._core import GnnamgError, Model, ModelConfig, SparseMatrix

__all__ = [
    "GnnamgError",
    "Model",
    "ModelConfig",
    "SparseMatrix",
    "classical_prolongation",
    "convergence_factor",
    "delaunay_laplacian",
    "evaluate",
    "fem_diffusion",
    "fourier_check",
    "from_scipy",
    "knn_laplacian",
    "learned_prolongation",
    "periodic_delaunay",
    "preconditioner_apply",
    "solve",
    "to_scipy",
    "train",
]


def to_scipy(a):
    indptr, indices, data, shape = a.csr()
    return sp.csr_matrix((data, indices, indptr), shape=shape)


def from_scipy(a):
    if isinstance(a, SparseMatrix):
        return a
    a = sp.csr_matrix(a)
    a.sum_duplicates()
    a.sort_indices()
    return SparseMatrix(a.indptr, a.indices, a.data, a.shape[0], a.shape[1])


def delaunay_laplacian(n, seed=0, distribution="lognormal"):
    return to_scipy(_core.delaunay_laplacian(n, seed, distribution))


def periodic_delaunay(b, c, seed=0, distribution="lognormal"):
    return to_scipy(_core.periodic_delaunay(b, c, seed, distribution))


def fem_diffusion(n, seed=0, distribution="lognormal:0:0.5"):
    return to_scipy(_core.fem_diffusion(n, seed, distribution))


def knn_laplacian(n=1024, k=10, cloud="two-gaussians", jitter=True, seed=0):
    return to_scipy(_core.knn_laplacian(n, k, cloud, jitter, seed))


def classical_prolongation(a):
    return to_scipy(_core.classical_prolongation(from_scipy(a)))


def learned_prolongation(model, a):
    return to_scipy(model.prolongation(from_scipy(a)))


def solve(a, b, kind="spd", model=None, tol=1e-8, max_iterations=500, cycle="w"):
    """Returns (x, residual_history, converged)."""
    x, history, converged = _core.solve(
        from_scipy(a), np.asarray(b, dtype=float), kind, model, tol, max_iterations, cycle
    )
    return x, np.asarray(history), converged


def convergence_factor(a, kind="spsd", model=None, cycle="w", seed=0):
    return _core.convergence_factor(from_scipy(a), kind, model, cycle, seed)


def preconditioner_apply(a, r, kind="spd", model=None):
    return _core.preconditioner_apply(from_scipy(a), np.asarray(r, dtype=float), kind, model)


def fourier_check(model, b=4, c=8, seed=0):
    """Fourier and dense losses of the model's tiled prolongation."""
    return _core.fourier_check(model, b, c, seed)


def train(stage1=4000, stage2_fresh=2000, stage2_coarsened=2000, batch_size=32, lr=3e-3,
          c=16, seed=0, loss_head="fourier", model=None, stages=2):
    """Returns (model, per-batch mean losses)."""
    return _core.train(stage1, stage2_fresh, stage2_coarsened, batch_size, lr, c, seed,
                       loss_head, model or ModelConfig(), stages)


def evaluate(model, sizes, runs=10, seed=0):
    """Rows of (n, seed, classical factor, learned factor)."""
    return _core.evaluate(model, list(sizes), runs, seed)
