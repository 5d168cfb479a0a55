"""Temporally regularized matrix factorization, Y ~ Z F with AR(p) factors.

Objective minimized (|Omega| observed entries, n series, T periods)::

    1/(2|Omega|) ||P_Omega(Y - Z F)||^2
    + lam_f/2 * 1/(d n) * [(1 - eta_f) ||F||^2 + eta_f ||F (I - A^T D^-1)||^2]
    + lam_phi/2 * 1/(d p) * ||phi||^2
    + lam_z/2 * [(1 - eta_z)/(T d) ||Z||^2
                 + eta_z/((T - p) d) * sum_j sum_{t>p} (Z_tj - sum_i phi_ji Z_{t-i,j})^2]

The graph term on F only appears when a similarity matrix A is given.
Every block (F, Z, phi) is quadratic given the others and is solved exactly,
so the objective never increases between sweeps.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import DataError, InsufficientHistory
from ..series import SeriesMatrix

DENSE_Z_LIMIT = 4000


@dataclass(frozen=True)
class TRMFHyper:
    d: int = 8
    p: int = 4
    lam_f: float = 0.5
    lam_z: float = 0.5
    lam_phi: float = 0.1
    eta_z: float = 0.9
    eta_f: float = 0.0
    max_sweeps: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if self.d < 1 or self.p < 1:
            raise ValueError("d and p must be >= 1")
        for name in ("lam_f", "lam_z", "lam_phi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("eta_z", "eta_f"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class TRMFModel:
    Z: np.ndarray
    F: np.ndarray
    phi: np.ndarray
    hyper: TRMFHyper
    objective_trace: tuple = ()
    A: np.ndarray | None = field(default=None, compare=False)
    ids: tuple = ()
    seed: int = 0

    @property
    def T(self) -> int:
        return self.Z.shape[0]

    def reconstruction(self) -> np.ndarray:
        return self.Z @ self.F

    def to_json(self) -> str:
        blob = {
            "format": "toporfm.trmf/1",
            "hyper": asdict(self.hyper),
            "seed": self.seed,
            "shapes": {"Z": list(self.Z.shape), "F": list(self.F.shape), "phi": list(self.phi.shape)},
            "Z": self.Z.tolist(),
            "F": self.F.tolist(),
            "phi": self.phi.tolist(),
            "objective_trace": list(self.objective_trace),
            "ids": [str(i) for i in self.ids],
            "A": None if self.A is None else np.asarray(self.A).tolist(),
        }
        return json.dumps(blob)

    @classmethod
    def from_json(cls, text: str) -> "TRMFModel":
        blob = json.loads(text)
        shapes = blob["shapes"]
        return cls(
            np.array(blob["Z"], dtype=float).reshape(shapes["Z"]),
            np.array(blob["F"], dtype=float).reshape(shapes["F"]),
            np.array(blob["phi"], dtype=float).reshape(shapes["phi"]),
            TRMFHyper(**blob["hyper"]),
            tuple(blob["objective_trace"]),
            None if blob["A"] is None else np.array(blob["A"], dtype=float),
            tuple(blob["ids"]),
            blob["seed"],
        )


def graph_laplacian_like(A: np.ndarray) -> np.ndarray:
    """I - A^T D^-1 with D the diagonal of row sums of A (zero rows kept at 1)."""
    A = np.asarray(A, dtype=float)
    deg = A.sum(axis=1)
    deg = np.where(deg > 0, deg, 1.0)
    return np.eye(len(A)) - A.T / deg[None, :]


def objective(Y: SeriesMatrix, Z, F, phi, hyper: TRMFHyper, A=None) -> float:
    """Value of the TRMF objective (see module docstring)."""
    T, n = Y.values.shape
    d, p = hyper.d, hyper.p
    M = Y.observed
    n_obs = M.sum()
    resid = np.where(M, Y.values - Z @ F, 0.0)
    val = 0.5 * (resid ** 2).sum() / n_obs
    f_ridge = (F ** 2).sum()
    if A is not None:
        FL = F @ graph_laplacian_like(A)
        f_pen = (1 - hyper.eta_f) * f_ridge + hyper.eta_f * (FL ** 2).sum()
    else:
        f_pen = f_ridge
    val += 0.5 * hyper.lam_f * f_pen / (d * n)
    val += 0.5 * hyper.lam_phi * (phi ** 2).sum() / (d * p)
    ar = _ar_residuals(Z, phi)
    val += 0.5 * hyper.lam_z * ((1 - hyper.eta_z) * (Z ** 2).sum() / (T * d)
                                + hyper.eta_z * (ar ** 2).sum() / ((T - p) * d))
    return float(val)


def _ar_residuals(Z, phi):
    T = Z.shape[0]
    p = phi.shape[1]
    r = Z[p:].copy()
    for i in range(1, p + 1):
        r -= phi[:, i - 1][None, :] * Z[p - i:T - i]
    return r


def update_F(Y: SeriesMatrix, Z, hyper: TRMFHyper, A=None) -> np.ndarray:
    """Exact minimizer over F with Z fixed."""
    T, n = Y.values.shape
    d = hyper.d
    M = Y.observed.astype(float)
    n_obs = M.sum()
    rhs = Z.T @ (M * Y.values) / n_obs  # d x n
    ridge = hyper.lam_f / (d * n)
    if A is None or hyper.eta_f == 0:
        if np.all(Y.observed):
            G = Z.T @ Z / n_obs + ridge * np.eye(d)
            return _spd_solve(G, rhs)
        G = np.einsum("ti,tj,tk->ijk", M, Z, Z) / n_obs + ridge * np.eye(d)[None]
        return _batched_spd_solve(G, rhs.T).T
    L = graph_laplacian_like(A)
    G = np.einsum("ti,tj,tk->ijk", M, Z, Z) / n_obs
    H = sp.block_diag(list(G), format="csr")
    H = H + ridge * (1 - hyper.eta_f) * sp.identity(d * n, format="csr")
    H = H + ridge * hyper.eta_f * sp.kron(sp.csr_matrix(L @ L.T), sp.identity(d), format="csr")
    x = spla.spsolve(H.tocsc(), rhs.T.reshape(-1))
    return x.reshape(n, d).T


def update_Z(Y: SeriesMatrix, F, phi, hyper: TRMFHyper) -> np.ndarray:
    """Exact minimizer over Z with F and phi fixed (one joint linear solve)."""
    T, n = Y.values.shape
    d, p = hyper.d, hyper.p
    M = Y.observed.astype(float)
    n_obs = M.sum()
    blocks = np.einsum("ti,ji,ki->tjk", M, F, F) / n_obs  # T x d x d
    rhs = ((M * Y.values) @ F.T / n_obs).reshape(-1)  # row-major vec(Z)
    ridge = hyper.lam_z * (1 - hyper.eta_z) / (T * d)
    ar_w = hyper.lam_z * hyper.eta_z / ((T - p) * d)

    size = T * d
    if size <= DENSE_Z_LIMIT:
        H = scipy.linalg.block_diag(*blocks) + ridge * np.eye(size)
        if ar_w > 0:
            for j in range(d):
                B = _ar_operator(T, phi[j])
                idx = np.arange(T) * d + j
                H[np.ix_(idx, idx)] += ar_w * (B.T @ B)
        return _spd_solve(H, rhs).reshape(T, d)
    H = sp.block_diag(list(blocks), format="csr") + ridge * sp.identity(size, format="csr")
    if ar_w > 0:
        rows, cols, vals = [], [], []
        for j in range(d):
            BtB = sp.csr_matrix(_ar_operator(T, phi[j]).T @ _ar_operator(T, phi[j])).tocoo()
            rows.append(BtB.row * d + j)
            cols.append(BtB.col * d + j)
            vals.append(BtB.data * ar_w)
        H = H + sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(size, size))
    return spla.spsolve(H.tocsc(), rhs).reshape(T, d)


def _ar_operator(T, phi_j):
    """(T - p) x T matrix mapping a factor series to its AR residuals."""
    p = len(phi_j)
    B = np.zeros((T - p, T))
    r = np.arange(T - p)
    B[r, r + p] = 1.0
    for i in range(1, p + 1):
        B[r, r + p - i] = -phi_j[i - 1]
    return B


def update_phi(Z, hyper: TRMFHyper) -> np.ndarray:
    """Exact minimizer over the AR coefficients with Z fixed (ridge per factor)."""
    T, d = Z.shape
    p = hyper.p
    a = hyper.lam_z * hyper.eta_z / ((T - p) * d)
    b = hyper.lam_phi / (d * p)
    phi = np.zeros((d, p))
    if a == 0:
        return phi
    for j in range(d):
        X = np.stack([Z[p - i:T - i, j] for i in range(1, p + 1)], axis=1)
        y = Z[p:, j]
        G = a * X.T @ X + b * np.eye(p)
        phi[j] = _spd_solve(G, a * X.T @ y)
    return phi


def _spd_solve(G, rhs):
    try:
        return scipy.linalg.solve(G, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return np.linalg.lstsq(G, rhs, rcond=None)[0]


def _batched_spd_solve(G, rhs):
    try:
        return np.linalg.solve(G, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.stack([_spd_solve(g, r) for g, r in zip(G, rhs)])


def _check_input(Y: SeriesMatrix, hyper: TRMFHyper):
    if not np.all(np.isfinite(Y.values)):
        raise DataError("non-finite values in Y")
    if hyper.p >= Y.T:
        raise InsufficientHistory(f"AR order p={hyper.p} needs more than {Y.T} periods")
    counts = Y.observed.sum(axis=0)
    short = np.flatnonzero(counts < hyper.p + 1)
    if len(short):
        raise InsufficientHistory(
            f"{len(short)} series have fewer than p+1={hyper.p + 1} observations "
            f"(first: {Y.ids[short[0]]!r})")


def trmf_fit(Y: SeriesMatrix, hyper: TRMFHyper = TRMFHyper(), seed: int = 0, A=None,
             init: tuple | None = None) -> TRMFModel:
    """Fit by block coordinate descent: F, then Z, then phi per sweep.

    Z and F start from seeded N(0, 0.1^2) draws and phi from zero, unless
    ``init=(Z, F, phi)`` is given. Stops when the relative objective
    improvement of a sweep drops below ``hyper.tol`` or after
    ``hyper.max_sweeps`` sweeps.
    """
    if not isinstance(Y, SeriesMatrix):
        Y = SeriesMatrix.dense(Y)
    _check_input(Y, hyper)
    T, n = Y.values.shape
    if A is not None:
        A = np.asarray(A, dtype=float)
        if A.shape != (n, n):
            raise DataError(f"similarity matrix must be {n} x {n}")
    if init is None:
        rng = np.random.default_rng(seed)
        Z = 0.1 * rng.standard_normal((T, hyper.d))
        F = 0.1 * rng.standard_normal((hyper.d, n))
        phi = np.zeros((hyper.d, hyper.p))
    else:
        Z, F, phi = (np.array(x, dtype=float) for x in init)

    trace = []
    prev = objective(Y, Z, F, phi, hyper, A)
    for _ in range(hyper.max_sweeps):
        F = update_F(Y, Z, hyper, A)
        Z = update_Z(Y, F, phi, hyper)
        phi = update_phi(Z, hyper)
        cur = objective(Y, Z, F, phi, hyper, A)
        trace.append(cur)
        if prev - cur <= hyper.tol * max(abs(prev), 1e-300):
            break
        prev = cur
    return TRMFModel(Z, F, phi, hyper, tuple(trace), A, Y.ids, seed)


def forecast_factors(Z, phi, h: int) -> np.ndarray:
    """Roll each factor forward with its AR(p) recursion; returns h x d."""
    T, d = Z.shape
    p = phi.shape[1]
    if h <= 0:
        return np.zeros((0, d))
    hist = np.concatenate([Z[max(T - p, 0):], np.zeros((h, d))])
    if T < p:
        hist = np.concatenate([np.zeros((p - T, d)), hist])
    for s in range(h):
        t = p + s
        hist[t] = sum(phi[:, i - 1] * hist[t - i] for i in range(1, p + 1))
    return hist[p:]


def trmf_forecast(model: TRMFModel, h: int, F: np.ndarray | None = None) -> np.ndarray:
    """h x n dynamic forecast beyond the last fitted period."""
    F = model.F if F is None else F
    return forecast_factors(model.Z, model.phi, h) @ F


def trmf_fit_loadings(model: TRMFModel, y_new, observed=None) -> np.ndarray:
    """Ridge loadings for new series against frozen factors.

    ``y_new`` is a length-T series or a T x m matrix; each column gets
    argmin_f 1/(2|Omega'|) ||P(y - Z f)||^2 + lam_f/(2d) ||f||^2.
    Returns a length-d vector or a d x m matrix.
    """
    y = np.asarray(y_new, dtype=float)
    single = y.ndim == 1
    if single:
        y = y[:, None]
    M = np.ones(y.shape, dtype=bool) if observed is None else np.asarray(observed, dtype=bool).reshape(y.shape)
    Z = model.Z
    T, d = Z.shape
    if y.shape[0] != T:
        raise DataError(f"series length {y.shape[0]} != model length {T}")
    counts = M.sum(axis=0)
    if np.any(counts < d):
        raise InsufficientHistory(f"loading fit needs at least d={d} observations per series")
    Mf = M.astype(float)
    ridge = model.hyper.lam_f / d
    yz = np.where(M, y, 0.0)
    if np.all(M):
        G = Z.T @ Z / T + ridge * np.eye(d)
        f = _spd_solve(G, Z.T @ yz / T)
    else:
        G = np.einsum("ti,tj,tk->ijk", Mf, Z, Z) / counts[:, None, None] + ridge * np.eye(d)[None]
        f = _batched_spd_solve(G, (Z.T @ yz / counts).T).T
    return f[:, 0] if single else f


__all__ = [
    "TRMFHyper", "TRMFModel", "forecast_factors", "graph_laplacian_like", "objective",
    "trmf_fit", "trmf_fit_loadings", "trmf_forecast", "update_F", "update_Z", "update_phi",
]
