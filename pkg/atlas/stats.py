"""
Statistical kernels: location / dispersion, correlations, first principal
component, Moran's I, Z-scores and Fisher-Jenks natural breaks.

All functions are pure and deterministic.

"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata

# Local imports
from .settings import JENKS_TIE_TOLERANCE, PCA_MAX_ROTATIONS, PCA_TOLERANCE
from .utils import ConvergenceError, NumericError, ZeroVarianceError


@dataclass(frozen=True, eq=False)
class VariableVector:
    """
    A named column of values aligned to a city's block-group order.

    """

    name: str
    values: np.ndarray
    geoids: Tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise NumericError(f"{self.name}: values must be one-dimensional.")
        if not np.all(np.isfinite(values)):
            raise NumericError(f"{self.name}: values must be finite.")
        if self.geoids and len(self.geoids) != len(values):
            raise NumericError(f"{self.name}: geoids and values differ in length.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None):
        return self.values if dtype is None else self.values.astype(dtype)


ArrayLike = Union[VariableVector, Sequence[float], np.ndarray]


@dataclass(frozen=True, eq=False)
class PcaResult:
    loadings: np.ndarray  # unit norm, ordered as the input columns
    scores: np.ndarray
    eigenvalue: float
    names: Tuple[str, ...] = ()


def _as_array(xs: ArrayLike) -> np.ndarray:
    return np.asarray(xs, dtype=float).ravel()


def _name(xs: ArrayLike, default: str = "input") -> str:
    return xs.name if isinstance(xs, VariableVector) else default


def median(xs: ArrayLike) -> float:
    """
    Median; mean of the two middle elements for even lengths.

    Raises
    ------
    NumericError
        If `xs` is empty

    """
    arr = _as_array(xs)
    if arr.size == 0:
        raise NumericError(f"median of empty {_name(xs)}.")
    return float(np.median(arr))


def mean(xs: ArrayLike) -> float:
    arr = _as_array(xs)
    if arr.size == 0:
        raise NumericError(f"mean of empty {_name(xs)}.")
    return float(np.mean(arr))


def std_dev(xs: ArrayLike) -> float:
    """
    Sample standard deviation (divisor n - 1).

    Raises
    ------
    NumericError
        If fewer than 2 values are given

    """
    arr = _as_array(xs)
    if arr.size < 2:
        raise NumericError(
            f"std_dev of {_name(xs)} needs at least 2 values, got {arr.size}."
        )
    return float(np.std(arr, ddof=1))


def _check_pair(x: np.ndarray, y: np.ndarray, names: Tuple[str, str]):
    if x.size != y.size:
        raise NumericError(f"{names[0]} and {names[1]} differ in length.")
    if x.size < 3:
        raise NumericError(
            f"Correlation of {names[0]} and {names[1]} needs at least 3 values."
        )
    for arr, name in zip((x, y), names):
        if np.ptp(arr) == 0:
            raise ZeroVarianceError(f"{name} is constant; correlation undefined.")


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(np.dot(xc, yc) / np.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))
    return max(-1.0, min(1.0, r))


def pearson(x: ArrayLike, y: ArrayLike) -> float:
    """
    Product-moment correlation.

    Raises
    ------
    ZeroVarianceError
        If either input is constant

    """
    xa, ya = _as_array(x), _as_array(y)
    _check_pair(xa, ya, (_name(x, "x"), _name(y, "y")))
    return _pearson(xa, ya)


def rank_average(xs: ArrayLike) -> np.ndarray:
    """Ranks starting at 1; ties get the mean of their rank span."""
    return rankdata(_as_array(xs), method="average")


def spearman(x: ArrayLike, y: ArrayLike) -> float:
    """
    Pearson correlation of average ranks.

    Raises
    ------
    ZeroVarianceError
        If either input is constant

    """
    xa, ya = _as_array(x), _as_array(y)
    _check_pair(xa, ya, (_name(x, "x"), _name(y, "y")))
    return _pearson(rank_average(xa), rank_average(ya))


def _jacobi_eigen(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Eigenvalues (diagonal order) and eigenvectors as columns

    Raises
    ------
    ConvergenceError
        If the off-diagonal norm is still above `PCA_TOLERANCE` after
        `PCA_MAX_ROTATIONS` rotations

    """
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    rotations = 0
    while np.sqrt(np.sum(np.tril(a, -1) ** 2)) > PCA_TOLERANCE:
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                if rotations >= PCA_MAX_ROTATIONS:
                    raise ConvergenceError(
                        f"Jacobi solver did not converge after {PCA_MAX_ROTATIONS} rotations."
                    )
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
                rotations += 1
    return np.diag(a).copy(), v


def pca_first_component(columns: Union[Sequence[ArrayLike], np.ndarray]) -> PcaResult:
    """
    First principal component of standardized columns.

    Each column is standardized with its sample mean and SD, the correlation
    matrix is decomposed with cyclic Jacobi rotations, and the top eigenvector
    is returned with the sign fixed so the first column's loading is >= 0.
    NOTE: If the first loading is exactly 0, the first nonzero loading is
    made positive instead.

    Parameters
    ----------
    columns : Union[Sequence[ArrayLike], np.ndarray]
        Columns (e.g. POV, SNAP, UNEMP, NOHS), or an (n, k) array

    Returns
    -------
    PcaResult
        Loadings, scores (standardized data x loadings) and eigenvalue

    Raises
    ------
    NumericError
        If there are fewer than 5 rows
    ZeroVarianceError
        If a column is constant
    ConvergenceError
        If the eigen solver does not converge

    """
    if isinstance(columns, np.ndarray) and columns.ndim == 2:
        data = np.asarray(columns, dtype=float)
        names = tuple(f"col{i}" for i in range(data.shape[1]))
    else:
        data = np.column_stack([_as_array(col) for col in columns])
        names = tuple(_name(col, f"col{i}") for i, col in enumerate(columns))

    n_rows = data.shape[0]
    if n_rows < 5:
        raise NumericError(f"PCA needs at least 5 rows, got {n_rows}.")
    sds = np.std(data, axis=0, ddof=1)
    for sd, name in zip(sds, names):
        if sd == 0:
            raise ZeroVarianceError(f"{name} is constant; cannot standardize.")

    z = (data - data.mean(axis=0)) / sds
    corr = (z.T @ z) / (n_rows - 1)
    corr = (corr + corr.T) / 2.0

    eigenvalues, eigenvectors = _jacobi_eigen(corr)
    top = int(np.argmax(eigenvalues))  # first index among ties
    loadings = eigenvectors[:, top]
    loadings = loadings / np.linalg.norm(loadings)
    pivot = loadings[0] if loadings[0] != 0 else loadings[np.flatnonzero(loadings)[0]]
    if pivot < 0:
        loadings = -loadings

    scores = z @ loadings
    return PcaResult(
        loadings=loadings,
        scores=scores,
        eigenvalue=float(max(eigenvalues[top], 0.0)),
        names=names,
    )


def morans_i(x: ArrayLike, w) -> float:
    """
    Global Moran's I.

    I = (n / S0) * sum_ij w_ij z_i z_j / sum_i z_i^2, with z = x - mean(x).
    Islands only contribute to the denominator.

    Parameters
    ----------
    x : ArrayLike
        Values aligned to the weights' region order
    w : SpatialWeights
        Spatial weights

    Raises
    ------
    NumericError
        If lengths differ, n < 2, or S0 = 0 (all islands)
    ZeroVarianceError
        If `x` is constant

    """
    arr = _as_array(x)
    if arr.size != w.n:
        raise NumericError(f"{_name(x)} has {arr.size} values for {w.n} regions.")
    if arr.size < 2:
        raise NumericError("Moran's I needs at least 2 regions.")
    if np.ptp(arr) == 0:
        raise ZeroVarianceError(f"{_name(x)} is constant; Moran's I undefined.")
    s0 = w.s0
    if s0 <= 0:
        raise NumericError("Moran's I undefined: every region is an island (S0 = 0).")

    z = arr - arr.mean()
    num = float(z @ (w.to_sparse() @ z))
    den = float(z @ z)
    return (arr.size / s0) * num / den


def z_score(sel_mean: float, city_mean: float, city_sd: float) -> float:
    """
    (sel_mean - city_mean) / city_sd

    Raises
    ------
    ZeroVarianceError
        If `city_sd` <= 0

    """
    if not city_sd > 0:
        raise ZeroVarianceError(f"City SD must be positive, got {city_sd}.")
    return (sel_mean - city_mean) / city_sd


def within_class_ssd(xs: ArrayLike, breaks: Sequence[float]) -> float:
    """
    Total within-class sum of squared deviations for a classification.

    Parameters
    ----------
    xs : ArrayLike
        Values
    breaks : Sequence[float]
        Class maxima except the last class (see `classify`)

    """
    arr = _as_array(xs)
    classes = classify(arr, breaks)
    total = 0.0
    for c in np.unique(classes):
        members = arr[classes == c]
        total += float(np.sum((members - members.mean()) ** 2))
    return total


def classify(xs: ArrayLike, breaks: Sequence[float]) -> np.ndarray:
    """
    0-based class index for each value: values equal to a break fall in the
    lower class; values above the top break take the top class.

    """
    return np.searchsorted(np.asarray(breaks, dtype=float), _as_array(xs), side="left")


def jenks_breaks(xs: ArrayLike, k: int) -> list:
    """
    Exact Fisher-Jenks natural breaks.

    Dynamic programming over the sorted values minimizes the total
    within-class SSD. Classes never split equal values. Among optimal
    partitions the one whose first class is smallest wins, then the one whose
    second class is smallest, and so on.

    Parameters
    ----------
    xs : ArrayLike
        Values
    k : int
        Number of classes

    Returns
    -------
    list
        k - 1 breaks: the maximum value of each class except the last

    Raises
    ------
    NumericError
        If k < 1 or k exceeds the number of distinct values

    """
    arr = np.sort(_as_array(xs))
    if k < 1:
        raise NumericError(f"Class count must be >= 1, got {k}.")
    n_distinct = np.unique(arr).size
    if k > n_distinct:
        raise NumericError(
            f"Cannot form {k} classes from {n_distinct} distinct value(s)."
        )
    if k == 1:
        return []

    n = arr.size
    centered = arr - arr.mean()
    s1 = np.concatenate(([0.0], np.cumsum(centered)))
    s2 = np.concatenate(([0.0], np.cumsum(centered**2)))
    # Valid cut positions: between distinct neighbours, plus the end
    cut_ok = np.zeros(n + 1, dtype=bool)
    cut_ok[1:n] = arr[1:] != arr[:-1]
    cut_ok[n] = True

    def ssd(start: int, stops: np.ndarray) -> np.ndarray:
        w = stops - start
        total = s1[stops] - s1[start]
        return np.maximum((s2[stops] - s2[start]) - total * total / w, 0.0)

    # best[c][i]: minimal SSD of arr[i:] split into c classes
    best = np.full((k + 1, n + 1), np.inf)
    choice = np.full((k + 1, n + 1), -1, dtype=int)
    starts = np.flatnonzero(np.concatenate(([True], cut_ok[1:n])))
    for i in starts:
        best[1][i] = ssd(i, np.array([n]))[0]
        choice[1][i] = n
    # Rounding in the cumulative sums must not decide exact ties
    tie = JENKS_TIE_TOLERANCE * max(best[1][0], np.finfo(float).tiny)
    for c in range(2, k + 1):
        for i in starts:
            stops = np.flatnonzero(cut_ok[i + 1 : n]) + i + 1
            if stops.size == 0:
                continue
            cost = ssd(i, stops) + best[c - 1][stops]
            lowest = cost.min()
            if not np.isfinite(lowest):
                continue
            j = int(np.flatnonzero(cost <= lowest + tie)[0])  # smallest first class
            best[c][i] = cost[j]
            choice[c][i] = stops[j]

    if not np.isfinite(best[k][0]):
        raise NumericError(f"Cannot form {k} classes from the given values.")

    breaks, i = [], 0
    for c in range(k, 1, -1):
        stop = choice[c][i]
        breaks.append(float(arr[stop - 1]))
        i = stop
    return breaks
