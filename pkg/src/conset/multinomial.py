"""Multinomial estimation over consideration-set categories.

Two levels are provided: the marginal MLE of the category proportions, and a
multinomial logit whose non-intercept coefficients carry a group (L2-norm)
penalty, one group per covariate spanning all categories. Coefficients obey
the symmetric side constraint: every column of ``beta`` sums to zero.

The penalized objective maximized by :func:`fit_penalized` is::

    sum_i log P(y_i | x_i) - lam * sum_{j >= 1} ||beta[:, j]||_2
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from conset.core import CountStatistic, Dataset, ReducedPowerSet
from conset.errors import ConvergenceWarning

# relative slack on lambda_max so that fits at lambda_max zero out every group
# despite O(eps) drift of the intercept during the first sweep
_LAMBDA_MAX_SLACK = 1e-9
SEPARATION_BOUND = 1e3


@dataclass(frozen=True)
class ProportionEstimate:
    pi: np.ndarray
    n: int


def mle_proportions(counts: CountStatistic) -> ProportionEstimate:
    """Relative frequencies ``n_q / n``, the multinomial MLE."""
    if counts.n < 1:
        raise ValueError("need at least one observation")
    c = np.asarray(counts.counts, dtype=np.float64)
    return ProportionEstimate(c / counts.n, counts.n)


def multinomial_loglik(counts, pi) -> float:
    """``sum_q n_q log pi_q`` with the convention ``0 log 0 = 0``."""
    counts = np.asarray(counts, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    pos = counts > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(counts[pos] * np.log(pi[pos])))


@dataclass(frozen=True)
class LogitModel:
    beta: np.ndarray  # K x p, row q = category q, column 0 = intercept
    lam: float = 0.0
    converged: bool = True
    objective_trace: tuple = ()
    n_iter: int = 0
    separation: bool = False
    rps: ReducedPowerSet | None = field(default=None, repr=False)
    covariate_names: tuple = ()

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    def active_groups(self) -> np.ndarray:
        """Indices of non-intercept columns with any nonzero coefficient."""
        return np.flatnonzero(np.any(self.beta[:, 1:] != 0, axis=0)) + 1


def _coef(model) -> np.ndarray:
    if isinstance(model, LogitModel):
        return model.beta
    return np.asarray(model, dtype=np.float64)


def _softmax(eta: np.ndarray) -> np.ndarray:
    e = np.exp(eta - eta.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict_probabilities(model, x) -> np.ndarray:
    """Category probabilities for one design row (K,) or a matrix of rows (n, K)."""
    beta = _coef(model)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != beta.shape[1]:
        raise ValueError(f"design row has length {x.shape[-1]}, model expects {beta.shape[1]}")
    return _softmax(x @ beta.T)


def log_likelihood(model, data: Dataset) -> float:
    beta = _coef(model)
    _check_dims(beta, data)
    eta = data.X @ beta.T
    return float(np.sum(eta[np.arange(data.n), data.y] - logsumexp(eta, axis=1)))


def gradient(model, data: Dataset) -> np.ndarray:
    """Gradient of :func:`log_likelihood` with respect to ``beta`` (K x p)."""
    beta = _coef(model)
    _check_dims(beta, data)
    resid = _onehot(data.y, beta.shape[0]) - _softmax(data.X @ beta.T)
    return resid.T @ data.X


def deviance(model, data: Dataset) -> float:
    """``-2 sum_i log P(y_i | x_i)``."""
    return -2.0 * log_likelihood(model, data)


def group_penalty(beta) -> float:
    """Sum of Euclidean norms of the non-intercept columns."""
    beta = _coef(beta)
    return float(np.sum(np.linalg.norm(beta[:, 1:], axis=0)))


def penalized_objective(beta, data: Dataset, lam: float) -> float:
    return log_likelihood(beta, data) - lam * group_penalty(beta)


def _check_dims(beta, data):
    if beta.shape != (data.K, data.p):
        raise ValueError(f"beta has shape {beta.shape}, data needs {(data.K, data.p)}")


def _onehot(y, K) -> np.ndarray:
    Y = np.zeros((y.shape[0], K))
    Y[np.arange(y.shape[0]), y] = 1.0
    return Y


def null_intercepts(data: Dataset) -> np.ndarray:
    """Centered log-proportions; zero counts are floored at half an observation."""
    counts = np.bincount(data.y, minlength=data.K).astype(np.float64)
    counts = np.where(counts > 0, counts, 0.5)
    b = np.log(counts / counts.sum())
    return b - b.mean()


def lambda_max(data: Dataset) -> float:
    """Smallest penalty at which every covariate group is zero.

    Computed from the group gradients at the intercept-only fit.
    """
    if data.p < 2:
        return 0.0
    beta = np.zeros((data.K, data.p))
    beta[:, 0] = null_intercepts(data)
    g = gradient(beta, data)[:, 1:]
    return float(np.max(np.linalg.norm(g, axis=0))) * (1.0 + _LAMBDA_MAX_SLACK)


def _compress(data: Dataset):
    """Unique design rows, their multiplicities and per-category counts."""
    Xu, inv = np.unique(data.X, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    w = np.bincount(inv, minlength=Xu.shape[0]).astype(np.float64)
    C = np.zeros((Xu.shape[0], data.K))
    np.add.at(C, (inv, data.y), 1.0)
    return Xu, w, C


def _lse(eta):
    mx = eta.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(eta - mx).sum(axis=1, keepdims=True)))[:, 0]


def fit_penalized(
    data: Dataset,
    lam: float,
    max_iter: int = 10000,
    tol: float = 1e-7,
    init=None,
) -> LogitModel:
    """Group-lasso multinomial logit by proximal block-coordinate ascent.

    Each sweep visits the intercept and then every covariate column. A column
    moves to the maximizer of a quadratic minorizer of the log-likelihood
    (plus the exact group penalty for covariate columns, which gives a group
    soft-threshold). The minorizer curvature starts at the largest eigenvalue
    of the current block Hessian and doubles until the minorization holds at
    the proposed point, capped at ``||x_j||^2 / 2``, which bounds the block
    Hessian everywhere on the centered subspace. Every accepted step therefore
    increases the penalized objective. Columns stay centered across
    categories. Stops when the largest coefficient change in a sweep is below
    ``tol``.

    The likelihood is evaluated on unique design rows weighted by their
    multiplicities, which is exact and cheap for binarized covariates.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if data.n == 0:
        raise ValueError("cannot fit on an empty dataset")
    if data.n < data.K:
        warnings.warn(f"only {data.n} observations for {data.K} categories", RuntimeWarning)

    K, p = data.K, data.p
    X, w, C = _compress(data)
    if init is None:
        beta = np.zeros((K, p))
        beta[:, 0] = null_intercepts(data)
    else:
        beta = np.array(_coef(init), dtype=np.float64)
        if beta.shape != (K, p):
            raise ValueError(f"init has shape {beta.shape}, expected {(K, p)}")
        beta -= beta.mean(axis=0)

    # Work with mean-centered covariate columns: same slopes and penalty, the
    # intercept absorbs beta_j * mean_j. Decouples columns from the intercept.
    shift = (w @ X) / w.sum()
    shift[0] = 0.0
    X = X - shift
    X[:, 0] = 1.0
    beta[:, 0] += beta[:, 1:] @ shift[1:]

    x2w = X * X * w[:, None]
    bound = 0.5 * x2w.sum(axis=0)
    eta = X @ beta.T
    lse = _lse(eta)

    def smooth(eta_, lse_):
        return float(np.sum(C * eta_) - w @ lse_)

    def update(j, ll):
        """Move column j; returns (max abs change, new log-likelihood)."""
        nonlocal eta, lse
        P = np.exp(eta - lse[:, None])
        g = X[:, j] @ (C - w[:, None] * P)
        a = x2w[:, j] @ P
        B = np.sqrt(x2w[:, j])[:, None] * P
        curv = min(float(np.linalg.eigvalsh(np.diag(a) - B.T @ B)[-1]), bound[j])
        curv = max(curv, 1e-3 * bound[j])
        old = beta[:, j]
        while True:
            z = old + g / curv
            z -= z.mean()
            if j > 0:
                nz = np.linalg.norm(z)
                thr = lam / curv
                z = np.zeros(K) if nz <= thr else (1.0 - thr / nz) * z
            d = z - old
            if not np.any(d != 0.0):
                return 0.0, ll
            eta_new = eta + X[:, j:j + 1] * d
            lse_new = _lse(eta_new)
            ll_new = smooth(eta_new, lse_new)
            minorant = ll + g @ d - 0.5 * curv * (d @ d)
            if ll_new >= minorant - 1e-12 * abs(ll) or curv >= bound[j]:
                beta[:, j] = z
                eta, lse = eta_new, lse_new
                return float(np.max(np.abs(d))), ll_new
            curv = min(2.0 * curv, bound[j])

    cols = [j for j in range(p) if bound[j] > 0.0]
    ll = smooth(eta, lse)
    trace = [ll - lam * group_penalty(beta)]
    converged = False
    it = 0
    full = True
    while it < max_iter:
        it += 1
        # full sweeps alternate with sweeps over the intercept + nonzero groups
        sweep = cols if full else [j for j in cols if j == 0 or np.any(beta[:, j])]
        max_change = 0.0
        for j in sweep:
            change, ll = update(j, ll)
            max_change = max(max_change, change)
        trace.append(ll - lam * group_penalty(beta))
        if max_change < tol:
            if full:
                converged = True
                break
            full = True
        else:
            full = False

    beta[:, 0] -= beta[:, 1:] @ shift[1:]
    # rounding can leave column sums at ~1e-16; zero groups stay exactly zero
    beta -= beta.mean(axis=0)
    separation = lam == 0 and (
        float(np.max(np.abs(beta))) > SEPARATION_BOUND
        # coefficients drift only logarithmically; a stalled fit that already
        # predicts some observation almost surely is the practical signal
        or (not converged and data.n > 0 and float(np.max(
            predict_probabilities(beta, data.X)[np.arange(data.n), data.y])) > 1 - 1e-6)
    )
    if not converged:
        warnings.warn(f"no convergence after {max_iter} sweeps at lam={lam:g}", ConvergenceWarning)
    if separation:
        warnings.warn("unbounded coefficients at lam=0; data may be separated", RuntimeWarning)
    return LogitModel(
        beta=beta,
        lam=float(lam),
        converged=converged,
        objective_trace=tuple(trace),
        n_iter=it,
        separation=separation,
        rps=data.rps,
        covariate_names=data.covariate_names,
    )


def lambda_path(data: Dataset, n_lambda: int = 100, ratio: float = 1e-3) -> np.ndarray:
    """Descending geometric grid from ``lambda_max`` to ``ratio * lambda_max``."""
    lmax = lambda_max(data)
    if not lmax > 0:
        raise ValueError("lambda_max is zero; no covariate carries signal")
    return geometric_grid(lmax, n_lambda, ratio)


def geometric_grid(lmax: float, n_lambda: int, ratio: float) -> np.ndarray:
    if n_lambda < 1 or not 0 < ratio <= 1:
        raise ValueError("need n_lambda >= 1 and 0 < ratio <= 1")
    if n_lambda == 1:
        return np.array([lmax])
    return lmax * ratio ** (np.arange(n_lambda) / (n_lambda - 1))


def fit_path(data: Dataset, grid, **opts) -> list[LogitModel]:
    """Fits along a descending grid, each warm-started from the previous one."""
    models = []
    init = None
    for lam in grid:
        m = fit_penalized(data, float(lam), init=init, **opts)
        models.append(m)
        init = m.beta
    return models


@dataclass(frozen=True)
class CvResult:
    lambda_grid: np.ndarray
    mean_deviance: np.ndarray  # out-of-fold deviance per observation
    se: np.ndarray
    lambda_min: float
    lambda_1se: float
    fold_assignment: np.ndarray
    fold_deviance: np.ndarray  # n_folds x n_lambda, summed over held-out rows

    @property
    def index_min(self) -> int:
        return int(np.flatnonzero(self.lambda_grid == self.lambda_min)[0])

    @property
    def index_1se(self) -> int:
        return int(np.flatnonzero(self.lambda_grid == self.lambda_1se)[0])


def assign_folds(y: np.ndarray, n_folds: int, seed, K: int | None = None) -> np.ndarray:
    """Stratified by category when every category has ``n_folds`` members, else random."""
    rng = np.random.default_rng(seed)
    n = y.shape[0]
    K = int(y.max()) + 1 if K is None else K
    counts = np.bincount(y, minlength=K)
    folds = np.empty(n, dtype=np.int64)
    if np.all(counts >= n_folds):
        offset = 0
        for q in range(K):
            idx = rng.permutation(np.flatnonzero(y == q))
            folds[idx] = (np.arange(idx.size) + offset) % n_folds
            offset += idx.size
    else:
        folds[rng.permutation(n)] = np.arange(n) % n_folds
    return folds


def cross_validate(
    data: Dataset,
    grid,
    n_folds: int = 10,
    seed=0,
    threads: int | None = None,
    **opts,
) -> CvResult:
    """K-fold cross-validation of the penalty along a descending grid."""
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    if data.n < n_folds:
        raise ValueError("fewer observations than folds")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or not np.all(np.diff(grid) < 0) and grid.size > 1:
        raise ValueError("grid must be strictly descending")
    if grid[0] <= 0:
        raise ValueError("degenerate grid")
    folds = assign_folds(data.y, n_folds, seed, data.K)

    def run(f):
        train, test = data.subset(folds != f), data.subset(folds == f)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            models = fit_path(train, grid, **opts)
        return np.array([deviance(m, test) for m in models])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        fold_dev = np.array(list(pool.map(run, range(n_folds))))

    sizes = np.bincount(folds, minlength=n_folds).astype(np.float64)
    cvm = fold_dev.sum(axis=0) / data.n
    per_obs = fold_dev / sizes[:, None]
    var = np.sum(sizes[:, None] * (per_obs - cvm) ** 2, axis=0) / sizes.sum()
    se = np.sqrt(var / (n_folds - 1))

    i_min = int(np.argmin(cvm))  # first hit on a descending grid = largest lambda
    ok = np.flatnonzero(cvm <= cvm[i_min] + se[i_min])
    i_1se = int(ok[0])
    return CvResult(
        lambda_grid=grid,
        mean_deviance=cvm,
        se=se,
        lambda_min=float(grid[i_min]),
        lambda_1se=float(grid[i_1se]),
        fold_assignment=folds,
        fold_deviance=fold_dev,
    )
