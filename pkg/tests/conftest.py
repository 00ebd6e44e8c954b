import numpy as np
import pytest

from pidpbc import BilinearPHModel, BuckBoostParams


@pytest.fixture(scope="session")
def table1() -> BuckBoostParams:
    """Circuit parameters used throughout the simulation scenarios."""
    return BuckBoostParams(
        v_in=24.0, inductance=1e-3, capacitance=330e-6, load_resistance=60.0
    )


def _skew(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n))
    return a - a.T


def random_bilinear_model(
    rng: np.random.Generator,
    n: int = 4,
    m: int = 2,
    r_scale: float = 1.0,
) -> BilinearPHModel:
    """Random model satisfying every structural invariant.

    Q is positive definite with moderate conditioning; set r_scale=0 for a
    lossless (R = 0) instance.
    """
    a = rng.normal(size=(n, n))
    q = a @ a.T + n * np.eye(n)
    if r_scale > 0.0:
        b = rng.normal(size=(n, n)) * np.sqrt(r_scale)
        r = (b @ b.T) / n
    else:
        r = np.zeros((n, n))
    return BilinearPHModel(
        Q=q,
        J0=_skew(rng, n),
        Ji=tuple(_skew(rng, n) for _ in range(m)),
        R=r,
        G0=rng.normal(size=(n, n)),
        Gi=tuple(rng.normal(size=(n, n)) for _ in range(m)),
        E=rng.normal(size=n),
    )
