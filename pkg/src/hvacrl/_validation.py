"""Input checks shared by the agents."""
import numpy as np
from sklearn.utils.validation import check_array

from .errors import DimensionMismatch


def check_generator(seed):
    """``numpy.random.Generator`` from ``None``, an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_observations(X, n_features):
    """2-D float array of observations with ``n_features`` columns."""
    X = check_array(np.atleast_2d(X), dtype=np.float64)
    if X.shape[1] != n_features:
        raise DimensionMismatch(f"expected {n_features} observation variables, got {X.shape[1]}")
    return X
