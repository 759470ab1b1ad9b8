"""tensor module: Dense float64 tensor primitives shared by every layer.

Tensors are plain numpy arrays of dtype float64. The functions here never
modify their arguments.

Functions
---------
as_tensor(x)
    Return x as a float64 numpy array.
dot(a, b)
    Return the dot product of two tensors of equal total length.
norm(a)
    Return the L2 norm of a tensor.
cosine(a, b)
    Return the cosine similarity of two nonzero tensors.
linf_project(x, eps)
    Clamp x elementwise to [-eps, eps].
sign(x)
    Return the elementwise sign of x.
pairwise_sum(x)
    Sum x along its first axis by recursive halving.
check_finite(x, what, error)
    Raise error if x holds NaN or Inf.
"""

# Third-party imports
import numpy as np

# Local imports
from deconflict.exceptions import ContractError, DegenerateGradientError, DimensionError

def as_tensor(x):
    """Return x as a float64 numpy array (copied when conversion is needed)."""

    return np.asarray(x, dtype=np.float64)

def dot(a, b):
    """Return the dot product of a and b.

    Parameters
    ----------
    a: numpy.ndarray
        first tensor, any shape
    b: numpy.ndarray
        second tensor with the same total length as a

    Returns
    -------
    float
    """

    a = as_tensor(a).ravel()
    b = as_tensor(b).ravel()
    if a.size != b.size:
        raise DimensionError(f"dot: length {a.size} does not match {b.size}")
    return float(np.dot(a, b))

def norm(a):
    """Return the L2 norm of a."""

    a = as_tensor(a).ravel()
    return float(np.sqrt(np.dot(a, a)))

def cosine(a, b):
    """Return dot(a, b) / (|a| |b|), clipped to [-1, 1].

    Raises DegenerateGradientError when either argument has zero norm so
    callers decide how to record the step.
    """

    na = norm(a)
    nb = norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateGradientError("cosine of a zero-norm vector")
    return float(np.clip(dot(a, b) / (na * nb), -1.0, 1.0))

def linf_project(x, eps):
    """Clamp x elementwise to [-eps, eps]."""

    if eps <= 0:
        raise ContractError("eps must be positive")
    return np.clip(as_tensor(x), -eps, eps)

def sign(x):
    """Return the elementwise sign of x as float64 values in {-1, 0, 1}."""

    return np.sign(as_tensor(x))

def pairwise_sum(x):
    """Sum x over its first axis by recursive halving.

    The reduction tree depends only on the number of rows, so the result is
    fixed for a fixed row order regardless of how the rows were produced.
    """

    x = as_tensor(x)
    n = x.shape[0]
    if n == 0:
        return np.zeros(x.shape[1:], dtype=np.float64)
    if n == 1:
        return x[0].copy()
    half = n // 2
    return pairwise_sum(x[:half]) + pairwise_sum(x[half:])

def check_finite(x, what="tensor", error=ContractError):
    """Raise error (a DeconflictError class) when x contains NaN or Inf."""

    if not np.all(np.isfinite(x)):
        raise error(f"{what} contains non-finite values")
