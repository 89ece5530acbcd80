"""Teachers, datasets and random-matrix primitives for the two network models.

Diagonal model: y = <x, theta*>/sqrt(d) + sqrt(Delta) xi with theta*_i ~ N(0, d i^(-2 gamma)).
Quadratic model: y = Tr[S* Z] + sqrt(Delta) xi with S* = U diag(sqrt(d) i^(-gamma)) U^T.

Randomness comes from counter-based Philox streams keyed by (seed, tag), so a
draw depends only on what it is for, never on the order tasks are scheduled.

Symmetric matrices are often handled in "isometric" vector coordinates:
the diagonal entries followed by sqrt(2) times the strict upper triangle.  The
map is an isometry between the Frobenius and Euclidean inner products, and a
GOE(d) matrix becomes a vector with iid N(0, 2/d) entries.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import InvalidSpecError

SQRT2 = np.sqrt(2.0)

# Ratio between the population excess risk of the quadratic network and the
# squared Frobenius error per dimension, ||S_hat - S*||_F^2 / d.  The state
# evolution for the quadratic model is written in the latter units.
QUAD_RISK_FACTOR = 2.0


class Model(str, Enum):
    DIAGONAL = "diagonal"
    QUADRATIC = "quadratic"


class DataMode(str, Enum):
    VECTOR_GAUSSIAN = "vector_gaussian"
    WISHART_CENTERED = "wishart_centered"
    GOE_UNIVERSAL = "goe_universal"


@dataclass(frozen=True)
class ProblemSpec:
    model: Model
    d: int
    n: int
    gamma: float
    delta: float
    lam: float = 0.0
    seed: int = 0
    mode: DataMode | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "model", Model(self.model))
            if self.mode is not None:
                object.__setattr__(self, "mode", DataMode(self.mode))
        except ValueError as exc:
            raise InvalidSpecError(str(exc)) from None
        if int(self.d) != self.d or self.d < 1:
            raise InvalidSpecError(f"d must be a positive integer, got {self.d}")
        if int(self.n) != self.n or self.n < 0:
            raise InvalidSpecError(f"n must be a nonnegative integer, got {self.n}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "n", int(self.n))
        if not np.isfinite(self.gamma) or self.gamma <= 0.5:
            raise InvalidSpecError(f"gamma must exceed 1/2, got {self.gamma}")
        if not np.isfinite(self.delta) or self.delta < 0:
            raise InvalidSpecError(f"delta (noise variance) must be >= 0, got {self.delta}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise InvalidSpecError(f"lambda must be >= 0, got {self.lam}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InvalidSpecError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))
        if self.data_mode is DataMode.GOE_UNIVERSAL and self.model is Model.DIAGONAL:
            raise InvalidSpecError("GOE measurements only apply to the quadratic model")
        if self.data_mode is not DataMode.VECTOR_GAUSSIAN and self.model is Model.DIAGONAL:
            raise InvalidSpecError("the diagonal model uses vector Gaussian inputs")
        if self.data_mode is DataMode.VECTOR_GAUSSIAN and self.model is Model.QUADRATIC:
            raise InvalidSpecError("the quadratic model needs matrix measurements")

    @property
    def data_mode(self) -> DataMode:
        if self.mode is not None:
            return self.mode
        return DataMode.VECTOR_GAUSSIAN if self.model is Model.DIAGONAL else DataMode.WISHART_CENTERED

    @property
    def n_eff(self) -> float:
        return float(self.n) if self.model is Model.DIAGONAL else self.n / self.d

    @property
    def alpha_tilde(self) -> float:
        return self.n / self.d**2

    def replace(self, **kw) -> "ProblemSpec":
        fields = dict(model=self.model, d=self.d, n=self.n, gamma=self.gamma, delta=self.delta,
                      lam=self.lam, seed=self.seed, mode=self.mode)
        fields.update(kw)
        return ProblemSpec(**fields)


# ---------------------------------------------------------------------------
# random streams


def _tag_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & (2**64 - 1)
    h = hashlib.blake2b(str(tag).encode(), digest_size=8).digest()
    return int.from_bytes(h, "little")


def stream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for (seed, tags); identical inputs give identical draws."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_tag_int(t) for t in tags))
    return np.random.Generator(np.random.Philox(ss))


def sample_goe(rng: np.random.Generator, d: int) -> np.ndarray:
    """GOE(d): off-diagonal variance 1/d, diagonal variance 2/d."""
    a = rng.standard_normal((d, d))
    return (a + a.T) / np.sqrt(2.0 * d)


def haar_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


# ---------------------------------------------------------------------------
# isometric coordinates for symmetric matrices


@lru_cache(maxsize=16)
def _triu(d):
    iu = np.triu_indices(d, 1)
    return iu[0], iu[1]


def sym_dim(d: int) -> int:
    return d * (d + 1) // 2


def sym_to_vec(s: np.ndarray) -> np.ndarray:
    d = s.shape[0]
    i, j = _triu(d)
    return np.concatenate([np.diag(s), SQRT2 * s[i, j]])


def vec_to_sym(v: np.ndarray) -> np.ndarray:
    m = v.shape[0]
    d = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if sym_dim(d) != m:
        raise ValueError(f"length {m} is not a triangular number")
    i, j = _triu(d)
    s = np.diag(v[:d]).astype(float)
    off = v[d:] / SQRT2
    s[i, j] = off
    s[j, i] = off
    return s


# ---------------------------------------------------------------------------
# targets


def power_law_variances(d: int, gamma: float) -> np.ndarray:
    return d * np.arange(1, d + 1, dtype=float) ** (-2.0 * gamma)


def power_law_eigvals(d: int, gamma: float) -> np.ndarray:
    return np.sqrt(d) * np.arange(1, d + 1, dtype=float) ** (-gamma)


@dataclass(frozen=True)
class DiagonalTarget:
    theta_star: np.ndarray
    lambda_diag: np.ndarray

    @property
    def d(self):
        return self.theta_star.shape[0]


@dataclass(frozen=True)
class QuadraticTarget:
    s_star: np.ndarray
    eigvals: np.ndarray
    basis: np.ndarray
    gamma: float | None = None

    @property
    def d(self):
        return self.eigvals.shape[0]

    @property
    def q_star(self) -> float:
        """Tr[S*^2]/d."""
        return float(np.sum(self.eigvals**2) / self.d)


def gen_diagonal_target(spec: ProblemSpec) -> DiagonalTarget:
    if spec.model is not Model.DIAGONAL:
        raise InvalidSpecError("gen_diagonal_target needs a diagonal spec")
    lam_diag = power_law_variances(spec.d, spec.gamma)
    rng = stream(spec.seed, "target")
    theta = rng.standard_normal(spec.d) * np.sqrt(lam_diag)
    return DiagonalTarget(theta_star=theta, lambda_diag=lam_diag)


def gen_quadratic_target(spec: ProblemSpec) -> QuadraticTarget:
    if spec.model is not Model.QUADRATIC:
        raise InvalidSpecError("gen_quadratic_target needs a quadratic spec")
    ev = power_law_eigvals(spec.d, spec.gamma)
    u = haar_orthogonal(stream(spec.seed, "target"), spec.d)
    s = (u * ev) @ u.T
    s = 0.5 * (s + s.T)
    return QuadraticTarget(s_star=s, eigvals=ev, basis=u, gamma=spec.gamma)


def diagonal_quadratic_target(d: int, gamma: float) -> QuadraticTarget:
    """Target with identity eigenbasis; the state evolution only sees the spectrum."""
    ev = power_law_eigvals(d, gamma)
    return QuadraticTarget(s_star=np.diag(ev), eigvals=ev, basis=np.eye(d), gamma=gamma)


# ---------------------------------------------------------------------------
# sensing operators for the quadratic model


class WishartSensing:
    """Z_mu = (x_mu x_mu^T - I)/sqrt(d), stored through the n x d input matrix."""

    def __init__(self, x: np.ndarray):
        self.x = np.ascontiguousarray(x, dtype=float)
        self.n, self.d = self.x.shape

    def forward(self, s):
        xs = self.x @ s
        return (np.einsum("ij,ij->i", xs, self.x) - np.trace(s)) / np.sqrt(self.d)

    def adjoint(self, r):
        g = (self.x.T * r) @ self.x
        g[np.diag_indices(self.d)] -= np.sum(r)
        return 0.5 * (g + g.T) / np.sqrt(self.d)

    def matrix(self, mu):
        x = self.x[mu]
        return (np.outer(x, x) - np.eye(self.d)) / np.sqrt(self.d)

    def rows(self) -> np.ndarray:
        """Measurements in isometric coordinates, shape (n, d(d+1)/2)."""
        i, j = _triu(self.d)
        diag = (self.x**2 - 1.0) / np.sqrt(self.d)
        off = SQRT2 * self.x[:, i] * self.x[:, j] / np.sqrt(self.d)
        return np.hstack([diag, off])


class GOESensing:
    """Independent GOE measurements held as isometric rows with N(0, 2/d) entries."""

    def __init__(self, a: np.ndarray, d: int):
        self.a = np.ascontiguousarray(a, dtype=float)
        self.n = self.a.shape[0]
        self.d = d

    def forward(self, s):
        return self.a @ sym_to_vec(s)

    def adjoint(self, r):
        return vec_to_sym(self.a.T @ r)

    def matrix(self, mu):
        return vec_to_sym(self.a[mu])

    def rows(self) -> np.ndarray:
        return self.a


@dataclass
class NormalEquations:
    """Sufficient statistics of a least-squares problem: G = A^T A, b = A^T y, yy = y^T y."""

    gram: np.ndarray
    xty: np.ndarray
    yty: float
    n: int


@dataclass
class Dataset:
    spec: ProblemSpec
    mode: DataMode
    design: object  # (n, d) array, WishartSensing, GOESensing, or None when compact
    labels: np.ndarray | None
    noise: np.ndarray | None
    stats: NormalEquations | None = None

    @property
    def n(self):
        return self.spec.n

    @property
    def d(self):
        return self.spec.d

    @property
    def compact(self) -> bool:
        return self.design is None

    def normal_equations(self) -> NormalEquations:
        """Statistics in the solver's scaling (diagonal: X/sqrt(d); quadratic: isometric rows)."""
        if self.stats is None:
            if self.spec.model is Model.DIAGONAL:
                xs = self.design / np.sqrt(self.d)
            else:
                xs = self.design.rows()
            self.stats = NormalEquations(gram=xs.T @ xs, xty=xs.T @ self.labels,
                                         yty=float(self.labels @ self.labels), n=self.n)
        return self.stats


def _bartlett(rng, n, m):
    """Lower-triangular L with L L^T ~ Wishart(n, I_m); requires n >= m."""
    L = np.tril(rng.standard_normal((m, m)), -1)
    L[np.diag_indices(m)] = np.sqrt(rng.chisquare(n - np.arange(m)))
    return L


def _compact_stats(rng, n, m, scale, signal, delta):
    """Exact joint law of (A^T A, A^T y, y^T y) for A with iid N(0, scale^2) entries.

    Uses A = Q L^T with Q Haar on the Stiefel manifold, so A^T xi = L (Q^T xi)
    with Q^T xi ~ N(0, I_m) and |xi|^2 = |Q^T xi|^2 + chi2(n - m).
    """
    L = _bartlett(rng, n, m)
    u = rng.standard_normal(m)
    rest = rng.chisquare(n - m) if n > m else 0.0
    lt_sig = L.T @ signal
    sd = np.sqrt(delta)
    gram = scale**2 * (L @ L.T)
    xty = scale**2 * (L @ lt_sig) + sd * scale * (L @ u)
    yty = scale**2 * lt_sig @ lt_sig + 2 * sd * scale * lt_sig @ u + delta * (u @ u + rest)
    return NormalEquations(gram=gram, xty=xty, yty=float(yty), n=n)


def gen_dataset(spec: ProblemSpec, target, compact: bool = False) -> Dataset:
    """Draw inputs and noisy labels.

    With ``compact=True`` (requires n >= number of parameters) only the exact
    sufficient statistics are sampled, which keeps huge-n simulations cheap.
    Compact quadratic datasets use GOE measurements.
    """
    mode = spec.data_mode
    sd = np.sqrt(spec.delta)
    if spec.model is Model.DIAGONAL:
        if not isinstance(target, DiagonalTarget) or target.d != spec.d:
            raise InvalidSpecError("target does not match a diagonal spec of this dimension")
        if compact:
            if spec.n < spec.d:
                raise InvalidSpecError("compact sampling needs n >= d")
            stats = _compact_stats(stream(spec.seed, "data", "compact"), spec.n, spec.d,
                                   1.0 / np.sqrt(spec.d), target.theta_star, spec.delta)
            return Dataset(spec, mode, None, None, None, stats)
        rng = stream(spec.seed, "data")
        x = rng.standard_normal((spec.n, spec.d))
        xi = stream(spec.seed, "noise").standard_normal(spec.n)
        y = x @ target.theta_star / np.sqrt(spec.d) + sd * xi
        return Dataset(spec, mode, x, y, xi)

    if not isinstance(target, QuadraticTarget) or target.d != spec.d:
        raise InvalidSpecError("target does not match a quadratic spec of this dimension")
    d = spec.d
    m = sym_dim(d)
    if compact:
        if spec.n < m:
            raise InvalidSpecError("compact sampling needs n >= d(d+1)/2")
        stats = _compact_stats(stream(spec.seed, "data", "compact"), spec.n, m,
                               np.sqrt(2.0 / d), sym_to_vec(target.s_star), spec.delta)
        return Dataset(spec, DataMode.GOE_UNIVERSAL, None, None, None, stats)
    rng = stream(spec.seed, "data")
    if mode is DataMode.WISHART_CENTERED:
        design = WishartSensing(rng.standard_normal((spec.n, d)))
    else:
        design = GOESensing(rng.standard_normal((spec.n, m)) * np.sqrt(2.0 / d), d)
    xi = stream(spec.seed, "noise").standard_normal(spec.n)
    y = design.forward(target.s_star) + sd * xi
    return Dataset(spec, mode, design, y, xi)


# ---------------------------------------------------------------------------
# risk


def _estimate_array(est):
    for name in ("theta_hat", "s_hat"):
        if hasattr(est, name):
            return getattr(est, name)
    return np.asarray(est, dtype=float)


def excess_risk(estimate, target) -> float:
    """Population excess risk: |theta - theta*|^2/d or 2 |S - S*|_F^2 / d."""
    est = _estimate_array(estimate)
    if isinstance(target, DiagonalTarget):
        ref = target.theta_star
        if est.shape != ref.shape:
            raise InvalidSpecError(f"shape mismatch {est.shape} vs {ref.shape}")
        return float(np.sum((est - ref) ** 2) / ref.shape[0])
    if isinstance(target, QuadraticTarget):
        ref = target.s_star
        if est.shape != ref.shape:
            raise InvalidSpecError(f"shape mismatch {est.shape} vs {ref.shape}")
        return QUAD_RISK_FACTOR * float(np.sum((est - ref) ** 2) / ref.shape[0])
    ref = _estimate_array(target)
    if est.shape != ref.shape:
        raise InvalidSpecError(f"shape mismatch {est.shape} vs {ref.shape}")
    factor = QUAD_RISK_FACTOR if est.ndim == 2 else 1.0
    return factor * float(np.sum((est - ref) ** 2) / ref.shape[0])


def matrix_mse(s_hat, target: QuadraticTarget) -> float:
    """|S_hat - S*|_F^2 / d, the units of the quadratic state evolution."""
    return excess_risk(s_hat, target) / QUAD_RISK_FACTOR
