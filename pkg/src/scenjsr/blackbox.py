"""Hidden switched-linear-system simulator, equal-modulus (self-similar
growth) classification of single modes, and a white-box brute-force bracket
on the joint spectral radius for validation.

The black-box contract is one-step: an observation is a pair (x, y) with x
uniform on the unit sphere, the mode index uniform and hidden, and
y = A_mode x.  The validation harness may peek at the mode through
:func:`observe_with_mode`; production callers use :func:`observe`, which
discards it.
"""

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng

__all__ = [
    "SwitchedSystem",
    "Observation",
    "SampleSet",
    "BarabanovError",
    "BarabanovResult",
    "JsrBracket",
    "sample_uniform_sphere",
    "observe",
    "observe_with_mode",
    "is_barabanov",
    "assert_no_barabanov",
    "jsr_bruteforce_bounds",
    "write_system",
    "read_system",
    "write_observations",
    "read_observations",
]

_UNIT_TOL = 1e-12


class BarabanovError(ValueError):
    """A mode admits an invariant quadratic form (A'PA == g^2 P)."""


@dataclass(frozen=True, eq=False)
class SwitchedSystem:
    """A finite set of real n x n modes."""

    modes: tuple

    def __post_init__(self):
        modes = tuple(np.asarray(m, dtype=float) for m in self.modes)
        if not modes:
            raise ValueError("need at least one mode")
        n = modes[0].shape[0]
        for m in modes:
            if m.ndim != 2 or m.shape != (n, n):
                raise ValueError("all modes must be square with one shared size")
        object.__setattr__(self, "modes", modes)

    @property
    def n(self) -> int:
        return self.modes[0].shape[0]

    @property
    def m(self) -> int:
        return len(self.modes)


@dataclass(frozen=True, eq=False)
class Observation:
    """One-step sample: unit x and its image y under a hidden mode."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError(f"x and y must be equal-length vectors, got "
                             f"{x.shape} and {y.shape}")
        if abs(float(np.linalg.norm(x)) - 1.0) > _UNIT_TOL:
            raise ValueError("x must lie on the unit sphere")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


class SampleSet:
    """Column-stacked observations; the sampled constraint data."""

    def __init__(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.shape != ys.shape or xs.ndim != 2:
            raise ValueError(f"expected matching (N, n) arrays, got {xs.shape} "
                             f"and {ys.shape}")
        norms = np.linalg.norm(xs, axis=1)
        if xs.shape[0] and float(np.abs(norms - 1.0).max()) > _UNIT_TOL:
            raise ValueError("every x must lie on the unit sphere")
        self.xs = xs
        self.ys = ys

    @classmethod
    def from_observations(cls, observations) -> "SampleSet":
        observations = list(observations)
        if not observations:
            raise ValueError("cannot infer the dimension of an empty sample set; "
                             "use SampleSet(np.zeros((0, n)), np.zeros((0, n)))")
        return cls(np.stack([o.x for o in observations]),
                   np.stack([o.y for o in observations]))

    def __len__(self) -> int:
        return self.xs.shape[0]

    @property
    def n(self) -> int:
        return self.xs.shape[1]

    def __iter__(self):
        return (Observation(self.xs[i], self.ys[i]) for i in range(len(self)))


def sample_uniform_sphere(n: int, rng: Rng) -> np.ndarray:
    """Uniform point on the unit sphere in R^n (normalized Gaussian)."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    while True:
        v = rng.normals(n)
        nrm = float(np.linalg.norm(v))
        if nrm >= 1e-8:
            return v / nrm


def observe_with_mode(sys: SwitchedSystem, rng: Rng):
    """Validation-harness variant of :func:`observe` that exposes the mode."""
    x = sample_uniform_sphere(sys.n, rng)
    mode = rng.randint(sys.m)
    return Observation(x, sys.modes[mode] @ x), mode


def observe(sys: SwitchedSystem, rng: Rng) -> Observation:
    """Draw one black-box observation; the switching index is discarded."""
    return observe_with_mode(sys, rng)[0]


# ---------------------------------------------------------------------------
# Equal-modulus classification.
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BarabanovResult:
    """Classification outcome plus the constructive witness when positive.

    ``marginal`` flags classifications within a factor 10 of the modulus
    threshold, where floating point cannot firmly decide the exact-arithmetic
    criterion.
    """

    flag: bool
    gamma: float | None
    p_matrix: np.ndarray | None
    modulus_spread: float
    witness_residual: float | None
    marginal: bool


def _real_eig_basis(w: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    """Real column basis from a complex eigendecomposition of a real matrix."""
    n = w.size
    cols = []
    used = np.zeros(n, dtype=bool)
    imag_tol = 1e-10 * max(scale, 1.0)
    for j in range(n):
        if used[j]:
            continue
        used[j] = True
        if abs(w[j].imag) <= imag_tol:
            cols.append(v[:, j].real)
            continue
        # Find the conjugate partner (adjacent for LAPACK, but search anyway).
        partner = None
        for k in range(j + 1, n):
            if not used[k] and abs(w[k] - w[j].conjugate()) <= 1e-6 * max(scale, 1.0):
                partner = k
                break
        if partner is None:
            raise np.linalg.LinAlgError("unpaired complex eigenvalue")
        used[partner] = True
        cols.append(v[:, j].real)
        cols.append(v[:, j].imag)
    return np.column_stack(cols)


def is_barabanov(a, tol: float = 1e-8) -> BarabanovResult:
    """Classify whether A preserves some positive quadratic form up to a
    uniform factor, i.e. A is diagonalizable with all eigenvalue moduli equal.

    When positive, returns gamma (the common modulus) and a positive
    definite P with |A'PA - gamma^2 P|_F <= 1e-8 |P|_F, built from the
    inverse of the real block-diagonalizing basis.  The classifier verifies
    that residual before reporting a positive, so near-defective inputs
    whose eigendecomposition is numerically untrustworthy come back
    negative.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    n = a.shape[0]
    w, v = np.linalg.eig(a)
    moduli = np.abs(w)
    scale = float(moduli.max())
    spread = float(moduli.max() - moduli.min())
    rel_spread = spread / scale if scale > 0 else 0.0
    marginal = (0.1 * tol) < rel_spread < (10.0 * tol)

    negative = BarabanovResult(False, None, None, spread, None, marginal)
    if rel_spread > tol:
        return negative
    if np.linalg.cond(v) >= 1e10:  # defective: no eigenbasis to trust
        return negative

    gamma = float(moduli.mean())
    try:
        basis = _real_eig_basis(w, v, scale)
        inv = np.linalg.solve(basis, np.eye(n))
    except np.linalg.LinAlgError:
        return negative
    p = inv.T @ inv
    p = 0.5 * (p + p.T)
    residual = float(np.linalg.norm(a.T @ p @ a - gamma**2 * p))
    p_norm = float(np.linalg.norm(p))
    if residual > 1e-8 * p_norm:
        return negative
    return BarabanovResult(True, gamma, p, spread, residual, marginal)


def assert_no_barabanov(sys: SwitchedSystem, tol: float = 1e-8) -> None:
    """Raise :class:`BarabanovError` naming the first offending mode."""
    for i, mode in enumerate(sys.modes):
        result = is_barabanov(mode, tol)
        if result.flag:
            raise BarabanovError(
                f"mode {i} admits an invariant quadratic form with "
                f"gamma={result.gamma:.6g}; the sampled problem's "
                f"non-degeneracy requirement fails")


# ---------------------------------------------------------------------------
# White-box brute-force bracket.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JsrBracket:
    """Two-sided bracket from products up to length ``depth``."""

    lower: float
    upper: float
    depth: int

    def __post_init__(self):
        if self.lower > self.upper + 1e-12:
            raise ValueError(f"bracket is inverted: {self.lower} > {self.upper}")


def jsr_bruteforce_bounds(sys: SwitchedSystem, depth: int) -> JsrBracket:
    """Classical product bracket on the joint spectral radius.

    lower: max over product lengths k <= depth of rho(product)^(1/k);
    upper: min over k of (max spectral norm of length-k products)^(1/k).
    Enumerates all m^k products per level, capped at 10^6 at the deepest.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if sys.m ** depth > 10**6:
        raise ValueError(
            f"enumeration cap exceeded: {sys.m}^{depth} products at depth {depth}")
    modes = np.stack(sys.modes)
    lower = 0.0
    upper = math.inf
    products = None
    for k in range(1, depth + 1):
        if products is None:
            products = modes
        else:
            products = (products[:, None] @ modes[None, :]).reshape(-1, sys.n, sys.n)
        rho = float(np.abs(np.linalg.eigvals(products)).max(axis=1).max())
        smax = float(np.linalg.svd(products, compute_uv=False)[:, 0].max())
        lower = max(lower, rho ** (1.0 / k))
        upper = min(upper, smax ** (1.0 / k))
    return JsrBracket(lower=lower, upper=upper, depth=depth)


# ---------------------------------------------------------------------------
# File formats (validation-harness side).
# ---------------------------------------------------------------------------


def write_system(path, sys: SwitchedSystem) -> None:
    import json

    doc = {"n": sys.n, "m": sys.m,
           "modes": [[float(v) for v in m.reshape(-1)] for m in sys.modes]}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)


def read_system(path) -> SwitchedSystem:
    import json

    with open(path) as f:
        doc = json.load(f)
    n = int(doc["n"])
    modes = [np.array(flat, dtype=float).reshape(n, n) for flat in doc["modes"]]
    if len(modes) != int(doc["m"]):
        raise ValueError(f"system file declares m={doc['m']} but has "
                         f"{len(modes)} modes")
    return SwitchedSystem(tuple(modes))


def write_observations(path, samples: SampleSet) -> None:
    with open(path, "w") as f:
        f.write(f"# n={samples.n}\n")
        for i in range(len(samples)):
            row = list(samples.xs[i]) + list(samples.ys[i])
            f.write(",".join(format(v, ".17g") for v in row) + "\n")


def read_observations(path) -> SampleSet:
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("# n="):
            raise ValueError(f"missing '# n=<n>' header in {path}")
        n = int(header[4:])
        xs, ys = [], []
        for line in f:
            line = line.strip()
            if not line:
                continue
            vals = [float(tok) for tok in line.split(",")]
            if len(vals) != 2 * n:
                raise ValueError(f"expected {2 * n} values per row, got {len(vals)}")
            xs.append(vals[:n])
            ys.append(vals[n:])
    xs_arr = np.array(xs, dtype=float).reshape(len(xs), n)
    ys_arr = np.array(ys, dtype=float).reshape(len(ys), n)
    return SampleSet(xs_arr, ys_arr)
