"""Input checks shared by the estimators and the CLI."""
import numpy as np

from .graph import Network


def check_network(net, d=None) -> Network:
    if not isinstance(net, Network):
        raise TypeError(f"expected a Network, got {type(net).__name__}")
    if d is not None and net.d != d:
        from .gnn import DimensionMismatch
        raise DimensionMismatch(
            f"network has {net.d} covariates, model was fit with {d}")
    return net


def check_node_vector(values, n, name="y", dtype=np.float64):
    v = np.asarray(values, dtype=dtype).ravel()
    if v.shape[0] != n:
        raise ValueError(f"{name} has {v.shape[0]} entries for {n} nodes")
    return v


def check_mask(mask, n):
    """Boolean mask of length ``n`` from a mask, index list or ``None``."""
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(mask).ravel()
    if mask.dtype == bool:
        if mask.shape[0] != n:
            raise ValueError("sample mask length differs from node count")
        return mask
    out = np.zeros(n, dtype=bool)
    out[mask.astype(np.int64)] = True
    return out
