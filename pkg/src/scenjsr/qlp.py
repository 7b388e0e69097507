"""Sampled quasi-linear problems and their lexicographic solver.

An instance holds sampled pairs (a_i, b_i) in R^d plus a common convex set
X given as an intersection of projector-equipped sets.  The solver
minimizes (lam, |x|^2) lexicographically subject to x in X and
a_i.x <= lam * b_i.x for every sample, under the instance contract that
b_i.x > 0 on X.  The sampled constraints are linear in x once lam is
fixed, so the solver bisects on lam and answers each feasibility query by
projecting the origin onto the intersection of X with the half-spaces
(a_i - lam b_i).x <= 0.  The projection of the origin onto the feasible
set at the final lam is also the minimum-norm point, which settles the
secondary objective.

Projections onto intersections use Dykstra's algorithm with correction
terms, run in the product space (one copy of the point per set, plus the
consensus subspace).  That formulation is still the exact two-set Dykstra
iteration, converges to the exact projection, and vectorizes over large
half-space bundles.  For instances with many sampled constraints the
feasibility routine wraps the projection in an outer working-set loop:
solve with the currently active half-spaces, scan all constraints at the
candidate point, pull in violated ones, repeat.  The working-set answer
equals the full projection whenever the scan comes back clean, because
dropping constraints can only enlarge the feasible set.

Alternating projections cannot certify infeasibility, so feasibility is
tolerance-based: residual <= tol_feas counts as feasible, and solutions
whose final residual lands between the projection tolerance and tol_feas
are reported as FeasibilityUncertain rather than Optimal.
"""

import itertools
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import symmat

__all__ = [
    "Ball",
    "Box",
    "Halfspace",
    "FroBall",
    "PsdShiftedCone",
    "QlpInstance",
    "QlpSolution",
    "SolveStatus",
    "EssentialSet",
    "InfeasibleError",
    "project_intersection",
    "feasible_at",
    "solve",
    "violates",
    "essential_set_exhaustive",
    "essential_set_greedy",
    "estimate_violation_probability",
    "instance_to_json",
    "instance_from_json",
]

#: Probe-to-feasibility ratio: tol_feas is 10x the projection tolerance, so
#: a residual in between flags an uncertain classification instead of a
#: silent misclassification.
FEAS_TO_PROJ_RATIO = 10.0

_DEFAULT_MAX_ITER = 20000
_PROBE_CAP = 2.0**60
_STALL_FACTOR = 4.0
_DIRECT_STACK_LIMIT = 64


class InfeasibleError(RuntimeError):
    """No feasible lam found up to the probe cap."""


# ---------------------------------------------------------------------------
# Common-set vocabulary.  Each set exposes project(x) -> x' (exact Euclidean
# projection) and distance(x) -> float.  Instances are treated as immutable.
# ---------------------------------------------------------------------------


class Ball:
    """Euclidean ball {x : |x - center| <= radius}."""

    kind = "ball"

    def __init__(self, center, radius: float):
        if radius <= 0:
            raise ValueError(f"radius must be positive, got {radius}")
        self.center = np.asarray(center, dtype=float).copy()
        self.radius = float(radius)

    def project(self, x: np.ndarray) -> np.ndarray:
        delta = x - self.center
        nrm = float(np.linalg.norm(delta))
        if nrm <= self.radius:
            return np.array(x, dtype=float)
        return self.center + delta * (self.radius / nrm)

    def distance(self, x: np.ndarray) -> float:
        return max(0.0, float(np.linalg.norm(x - self.center)) - self.radius)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius}


class FroBall:
    """Frobenius-norm cap |M|_F <= C on vectorized symmetric matrices.

    In svec coordinates this is the origin-centered Euclidean ball of
    radius C, because the vectorization is an isometry.
    """

    kind = "fro_ball"

    def __init__(self, cap: float):
        if cap <= 0:
            raise ValueError(f"cap must be positive, got {cap}")
        self.cap = float(cap)

    def project(self, x: np.ndarray) -> np.ndarray:
        nrm = float(np.linalg.norm(x))
        if nrm <= self.cap:
            return np.array(x, dtype=float)
        return x * (self.cap / nrm)

    def distance(self, x: np.ndarray) -> float:
        return max(0.0, float(np.linalg.norm(x)) - self.cap)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "C": self.cap}


class Box:
    """Axis-aligned box {x : lo <= x <= hi}; entries may be +-inf."""

    kind = "box"

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float).copy()
        self.hi = np.asarray(hi, dtype=float).copy()
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise ValueError("box bounds must satisfy lo <= hi elementwise")

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def distance(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(x - self.project(x)))

    def descriptor(self) -> dict:
        none_if_inf = lambda v, sign: None if v == sign * math.inf else v
        return {
            "kind": self.kind,
            "lo": [none_if_inf(v, -1) for v in self.lo],
            "hi": [none_if_inf(v, 1) for v in self.hi],
        }


class Halfspace:
    """Half-space {x : normal.x <= offset}.  Programmatic only (no JSON form)."""

    kind = "halfspace"

    def __init__(self, normal, offset: float):
        self.normal = np.asarray(normal, dtype=float).copy()
        self.offset = float(offset)
        self._sq = float(self.normal @ self.normal)
        if self._sq == 0.0:
            raise ValueError("half-space normal must be nonzero")

    def project(self, x: np.ndarray) -> np.ndarray:
        excess = float(self.normal @ x) - self.offset
        if excess <= 0.0:
            return np.array(x, dtype=float)
        return x - (excess / self._sq) * self.normal

    def distance(self, x: np.ndarray) -> float:
        excess = float(self.normal @ x) - self.offset
        return max(0.0, excess) / math.sqrt(self._sq)


class PsdShiftedCone:
    """Vectorized matrices whose symmetric form has all eigenvalues >= 1."""

    kind = "psd_shifted"

    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"matrix dimension must be >= 1, got {n}")
        self.n = int(n)

    def project(self, x: np.ndarray) -> np.ndarray:
        return symmat.svec(symmat.proj_psd_shifted(symmat.smat(x)))

    def distance(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(x - self.project(x)))

    def descriptor(self) -> dict:
        return {"kind": self.kind, "n": self.n}


def set_from_descriptor(obj: dict):
    """Rebuild a named common set from its JSON descriptor."""
    kind = obj.get("kind")
    if kind == "ball":
        return Ball(obj["center"], obj["radius"])
    if kind == "fro_ball":
        return FroBall(obj["C"])
    if kind == "box":
        lo = [(-math.inf if v is None else v) for v in obj["lo"]]
        hi = [(math.inf if v is None else v) for v in obj["hi"]]
        return Box(lo, hi)
    if kind == "psd_shifted":
        return PsdShiftedCone(obj["n"])
    raise ValueError(f"unknown common-set kind: {kind!r}")


class _HalfspaceStack:
    """Bundle of half-spaces {x : H x <= 0}, projected row-block-wise.

    ``row_ids`` names each row for correction reuse across runs; defaults
    to positional indices.
    """

    def __init__(self, h: np.ndarray, row_ids=None):
        self.h = h
        sq = np.einsum("ij,ij->i", h, h)
        self.active = sq > 0.0  # zero rows are vacuous constraints
        self.sq = np.where(self.active, sq, 1.0)
        self.norms = np.sqrt(self.sq)
        self.rows = h.shape[0]
        self.row_ids = (np.arange(self.rows) if row_ids is None
                        else np.asarray(row_ids, dtype=int))

    def project_rows(self, u: np.ndarray) -> np.ndarray:
        excess = np.einsum("ij,ij->i", self.h, u)
        step = np.where(self.active, np.maximum(excess, 0.0) / self.sq, 0.0)
        return u - step[:, None] * self.h

    def distances(self, x: np.ndarray) -> np.ndarray:
        excess = self.h @ x
        return np.where(self.active, np.maximum(excess, 0.0) / self.norms, 0.0)


# ---------------------------------------------------------------------------
# Dykstra projection onto an intersection.
# ---------------------------------------------------------------------------


def _normalize_blocks(sets):
    blocks = []
    for s in sets:
        if isinstance(s, _HalfspaceStack):
            if s.rows:
                blocks.append(s)
        else:
            blocks.append(s)
    return blocks


def _residual(blocks, x: np.ndarray) -> float:
    worst = 0.0
    for b in blocks:
        if isinstance(b, _HalfspaceStack):
            d = b.distances(x)
            if d.size:
                worst = max(worst, float(d.max()))
        else:
            worst = max(worst, b.distance(x))
    return worst


class _HalfRow:
    """One half-space h.x <= 0 as a lightweight projection unit."""

    __slots__ = ("h", "sq")

    def __init__(self, h: np.ndarray, sq: float):
        self.h = h
        self.sq = sq

    def project(self, x: np.ndarray) -> np.ndarray:
        excess = float(self.h @ x)
        if excess <= 0.0:
            return x
        return x - (excess / self.sq) * self.h


_CYCLIC_ROW_LIMIT = 1024  # beyond this the vectorized product form wins


class _UnitSystem:
    """Expanded projection units with stable keys for correction reuse.

    Keys name each unit: ("set", position) for whole common sets and
    ("row", constraint id) for individual half-spaces, so corrections can
    be carried between runs that share constraints (bisection neighbors,
    constraint subsets).
    """

    def __init__(self, blocks, dim: int):
        self.dim = dim
        self.blocks = [b for b in blocks
                       if not (isinstance(b, _HalfspaceStack) and b.rows == 0)]
        self.units = []
        self.keys = []
        set_pos = 0
        for b in self.blocks:
            if isinstance(b, _HalfspaceStack):
                for i in range(b.rows):
                    if b.active[i]:
                        self.units.append(_HalfRow(b.h[i], float(b.sq[i])))
                        self.keys.append(("row", int(b.row_ids[i])))
            else:
                self.units.append(b)
                self.keys.append(("set", set_pos))
                set_pos += 1
        self.stacks = [b for b in self.blocks if isinstance(b, _HalfspaceStack)]

    def sweep(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        """One Dykstra cycle; mutates the correction matrix p."""
        for i, unit in enumerate(self.units):
            t = x + p[i]
            x = unit.project(t)
            p[i] = t - x
        return x

    def cheap_residual(self, x: np.ndarray) -> float:
        worst = 0.0
        for b in self.stacks:
            d = b.distances(x)
            if d.size:
                worst = max(worst, float(d.max()))
        return worst

    def residual(self, x: np.ndarray) -> float:
        return _residual(self.blocks, x)

    def warm_from(self, saved: dict) -> np.ndarray:
        """Correction matrix seeded from another run's key -> vector map.

        Half-space corrections live on the ray spanned by the (current)
        normal; saved vectors are re-projected onto it, which also absorbs
        the small rotation the normals undergo between nearby lam levels.
        """
        p = np.zeros((len(self.units), self.dim))
        for i, key in enumerate(self.keys):
            v = saved.get(key)
            if v is None:
                continue
            unit = self.units[i]
            if isinstance(unit, _HalfRow):
                coef = float(v @ unit.h) / unit.sq
                if coef > 0.0:
                    p[i] = coef * unit.h
            else:
                p[i] = v
        return p


def _extrapolate(system: _UnitSystem, x0: np.ndarray, p: np.ndarray,
                 growth: np.ndarray, res_now: float, tol: float):
    """Probe forward along the correction-growth direction.

    During a multiplier-loading stall the corrections grow linearly while
    the iterate barely moves; jumping the corrections ahead and re-running
    a few cycles either lands past the stall (residual drops: adopt) or
    fails to improve (true gap: the caller counts strikes).  Every probed
    state keeps the origin-projection invariant x == -sum(p), so adopting
    one is always legitimate.
    """
    best_res, best_x, best_p = math.inf, None, None
    prev = res_now
    for mult in (64.0, 256.0, 1024.0, 4096.0, 16384.0, 65536.0):
        p_try = p + growth * mult
        x_try = x0 - p_try.sum(axis=0)
        for _ in range(12):
            x_try = system.sweep(x_try, p_try)
        res_try = system.residual(x_try)
        if res_try < best_res:
            best_res, best_x, best_p = res_try, x_try, p_try
            if res_try <= tol:
                break
        elif res_try > 3.0 * prev:
            break  # past the useful range and getting worse
        prev = res_try
    return best_res, best_x, best_p


def _project_dykstra(system: _UnitSystem, x0: np.ndarray, tol: float,
                     max_iter: int, warm_p: np.ndarray | None = None):
    """Dykstra projection of x0, warm-startable and stall-aware.

    Every unit step preserves x + sum(p) == x0, so any correction matrix
    defines a valid state with x = x0 - sum(p); warm starts reuse
    corrections from related runs.  Flat residual windows trigger extrapolation
    probes; two consecutive failed probes mean the flatness is a genuine
    infeasibility gap rather than a loading stall, and the best point
    returns early with its true residual.

    Returns (point, residual, cycles, corrections).
    """
    r = len(system.units)
    x0 = np.asarray(x0, dtype=float)
    if r == 0:
        return x0.copy(), 0.0, 0, np.zeros((0, system.dim))
    if warm_p is not None:
        p = np.array(warm_p, dtype=float)
        x = x0 - p.sum(axis=0)
    else:
        p = np.zeros((r, system.dim))
        x = x0.copy()

    best_res = system.residual(x)
    best_x, best_p = x.copy(), p.copy()
    if best_res <= tol:
        return best_x, best_res, 0, best_p

    window = 40
    window_res = math.inf
    prev_p = p.copy()
    next_cheap_full = 0
    flat_strikes = 0
    cycle = 0

    for cycle in range(1, max_iter + 1):
        x = system.sweep(x, p)

        if system.cheap_residual(x) <= tol and cycle >= next_cheap_full:
            res = system.residual(x)
            if res <= tol:
                return x, res, cycle, p
            if res < best_res:
                best_res, best_x, best_p = res, x.copy(), p.copy()
            next_cheap_full = cycle + min(64, max(2, cycle // 8))

        if cycle % window == 0:
            res = system.residual(x)
            if res < best_res:
                best_res, best_x, best_p = res, x.copy(), p.copy()
            if best_res <= tol:
                return best_x, best_res, cycle, best_p
            if res > window_res * 0.997:  # flat window: stall or true gap
                growth = (p - prev_p) / window
                if float(np.abs(growth).max()) > 0.0:
                    probe_res, probe_x, probe_p = _extrapolate(
                        system, x0, p, growth, res, tol)
                    if probe_res < 0.6 * res or probe_res <= tol:
                        x, p = probe_x, probe_p
                        if probe_res < best_res:
                            best_res = probe_res
                            best_x, best_p = x.copy(), p.copy()
                        if best_res <= tol:
                            return best_x, best_res, cycle, best_p
                        flat_strikes = 0
                    else:
                        flat_strikes += 1
                else:
                    flat_strikes += 1
                if flat_strikes >= 2:
                    break
            else:
                flat_strikes = 0
            window_res = res
            prev_p = p.copy()

    res = system.residual(x)
    if res < best_res:
        best_res, best_x, best_p = res, x, p
    return best_x, best_res, cycle, best_p


def _dykstra_product(x0, blocks, tol, max_iter):
    """Two-set Dykstra in the product space (one copy per set plus the
    consensus subspace); vectorizes over large half-space bundles."""
    dim = x0.size
    stacks = [b for b in blocks if isinstance(b, _HalfspaceStack)]
    singles = [b for b in blocks if not isinstance(b, _HalfspaceStack)]
    rows = sum(b.rows for b in stacks) + len(singles)
    if rows == 0:
        return np.array(x0, dtype=float), 0.0, 0
    p = np.zeros((rows, dim))
    q = np.zeros((rows, dim))
    y = np.empty((rows, dim))
    x = np.array(x0, dtype=float)

    spans = []
    lo = 0
    for b in stacks:
        spans.append((b, lo, lo + b.rows))
        lo += b.rows
    single_rows = list(range(lo, rows))

    def cheap_residual(pt):
        worst = 0.0
        for b in stacks:
            d = b.distances(pt)
            if d.size:
                worst = max(worst, float(d.max()))
        return worst

    best_res = _residual(blocks, x)
    best_x = x.copy()
    if best_res <= tol:
        return best_x, best_res, 0

    window = 150
    window_res = math.inf
    next_cheap_full = 0
    plateau_strikes = 0
    cycle = 0

    for cycle in range(1, max_iter + 1):
        u = x[None, :] + p
        for b, lo, hi in spans:
            y[lo:hi] = b.project_rows(u[lo:hi])
        for b, r in zip(singles, single_rows):
            y[r] = b.project(u[r])
        np.subtract(u, y, out=p)
        v = y + q
        x = v.mean(axis=0)
        np.subtract(v, x[None, :], out=q)

        if cheap_residual(x) <= tol and cycle >= next_cheap_full:
            res = _residual(blocks, x)
            if res <= tol:
                return x, res, cycle
            if res < best_res:
                best_res, best_x = res, x.copy()
            next_cheap_full = cycle + min(64, max(4, cycle // 8))

        if cycle % window == 0:
            res = _residual(blocks, x)
            if res < best_res:
                best_res, best_x = res, x.copy()
            if best_res <= tol:
                return best_x, best_res, cycle
            if res > window_res * 0.997:
                plateau_strikes += 1
                if plateau_strikes >= 2:
                    break
            else:
                plateau_strikes = 0
            window_res = res

    res = _residual(blocks, x)
    if res < best_res:
        best_res, best_x = res, x
    return best_x, best_res, cycle


def _dykstra(x0, blocks, tol, max_iter):
    rows = sum(b.rows if isinstance(b, _HalfspaceStack) else 1 for b in blocks)
    if rows <= _CYCLIC_ROW_LIMIT:
        system = _UnitSystem(blocks, np.asarray(x0).size)
        x, res, cycles, _ = _project_dykstra(system, x0, tol, max_iter)
        return x, res, cycles
    return _dykstra_product(x0, blocks, tol, max_iter)


def project_intersection(x0, sets, tol: float, max_iter: int = _DEFAULT_MAX_ITER):
    """Project x0 onto the intersection of the given convex sets.

    Returns (point, residual) where residual is the largest distance from
    the returned point to any of the sets.  A residual <= tol means the
    point is within tol of every set and of the true projection; a larger
    residual means the iteration budget ran out or the intersection is
    empty, and the caller decides how to interpret it.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if not sets:
        raise ValueError("need at least one set")
    x0 = np.asarray(x0, dtype=float)
    blocks = _normalize_blocks(sets)
    if not blocks:
        return x0.copy(), 0.0
    x, res, _ = _dykstra(x0, blocks, tol, max_iter)
    return x, res


# ---------------------------------------------------------------------------
# Instances and solutions.
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QlpInstance:
    """Immutable problem data: sampled pairs plus the common set X.

    Build through :meth:`build`, which runs the documented feasibility
    probe: project the origin onto X, require the result to be nonzero
    (so 0 is outside X) and fixed under every projector (so X is
    nonempty to within the probe tolerance).  Compactness and convexity
    of the supplied sets are trusted, and the contract b_i.x > 0 on X is
    declared, not checked, at build time (tests sample it).
    """

    dim: int
    a: np.ndarray  # (N, dim) constraint numerators
    b: np.ndarray  # (N, dim) constraint denominators
    common_set: tuple
    anchor: np.ndarray  # projection of the origin onto X
    anchor_residual: float

    @classmethod
    def build(cls, a, b, common_set, dim: int | None = None,
              probe_tol: float = 1e-9, probe_max_iter: int = 5000) -> "QlpInstance":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.ndim == 1:
            a = a.reshape(1, -1)
        if b.ndim == 1:
            b = b.reshape(1, -1)
        if a.size == 0 and b.size == 0:
            if dim is None:
                raise ValueError("dim is required when there are no constraints")
            a = a.reshape(0, dim)
            b = b.reshape(0, dim)
        if a.shape != b.shape or a.ndim != 2:
            raise ValueError(f"mismatched constraint shapes {a.shape} vs {b.shape}")
        if dim is None:
            dim = a.shape[1]
        if dim != a.shape[1]:
            raise ValueError(f"constraints have width {a.shape[1]}, expected {dim}")
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        common_set = tuple(common_set)
        if not common_set:
            raise ValueError("common set X must have at least one projector")
        anchor, residual = project_intersection(
            np.zeros(dim), common_set, probe_tol, probe_max_iter)
        if residual > 10 * probe_tol:
            raise ValueError(
                f"feasibility probe failed: X looks empty (residual {residual:.3e})")
        if float(np.linalg.norm(anchor)) <= 10 * probe_tol:
            raise ValueError("feasibility probe failed: origin belongs to X")
        return cls(dim=dim, a=a.copy(), b=b.copy(), common_set=common_set,
                   anchor=anchor, anchor_residual=residual)

    @property
    def nconstraints(self) -> int:
        return self.a.shape[0]

    @property
    def scale(self) -> float:
        """Tolerance scale 1 + |anchor|, anchor being the min-norm point of X."""
        return 1.0 + float(np.linalg.norm(self.anchor))


class SolveStatus(Enum):
    OPTIMAL = "Optimal"
    FEASIBILITY_UNCERTAIN = "FeasibilityUncertain"


@dataclass
class QlpSolution:
    lambda_star: float
    x_star: np.ndarray
    max_violation: float
    set_residual: float
    bracket_width: float  # final bisection bracket width, in lambda units
    status: SolveStatus
    # Final projection corrections, reusable to warm related runs (internal;
    # not part of the stable surface).
    warm_state: dict | None = None


@dataclass(frozen=True)
class EssentialSet:
    indices: tuple
    lambda_star: float
    cost: float


def _default_tol_feas(inst: QlpInstance) -> float:
    return 1e-7 * inst.scale


def _run_units(inst: QlpInstance, h: np.ndarray, row_ids, tol, budget,
               warm: dict | None):
    stack = _HalfspaceStack(h, row_ids=row_ids) if h.shape[0] else None
    blocks = list(inst.common_set) + ([stack] if stack is not None else [])
    system = _UnitSystem(blocks, inst.dim)
    warm_p = system.warm_from(warm) if warm else None
    x, res, cycles, p = _project_dykstra(system, np.zeros(inst.dim), tol,
                                         budget, warm_p)
    return x, res, cycles, dict(zip(system.keys, p))


def _project_at(inst: QlpInstance, lam: float, tol: float, max_iter: int,
                warm: dict | None = None):
    """Project the origin onto X intersected with the lam-level half-spaces.

    Uses a working-set loop for large stacks: solve on the active subset,
    scan every constraint at the candidate, add offenders, repeat (sound
    because dropping constraints only enlarges the feasible set, so a
    clean scan certifies the working answer for the full problem).  The
    returned residual is always measured against the full constraint set.

    ``warm`` carries correction vectors from a related run, keyed as in
    :class:`_UnitSystem`.  Returns (point, residual, active ids, warm-out).
    """
    n = inst.nconstraints
    h_all = inst.a - lam * inst.b

    if n <= _DIRECT_STACK_LIMIT:
        active = np.arange(n)
        x, res, _, warm_out = _run_units(inst, h_all, active, tol, max_iter, warm)
        return x, res, active, warm_out

    full_stack = _HalfspaceStack(h_all)
    if warm:
        active = np.array(sorted(k[1] for k in warm if k[0] == "row"), dtype=int)
    else:
        active = np.empty(0, dtype=int)
    budget = max_iter
    batch = 16
    x, res, warm_out = inst.anchor.copy(), math.inf, warm or {}
    for _ in range(60):
        x, working_res, used, warm_out = _run_units(
            inst, h_all[active], active, tol, max(budget, 1), warm)
        warm = warm_out
        budget = max(budget - used, 200)
        dists = full_stack.distances(x)
        res = max(working_res, float(dists.max()) if dists.size else 0.0)
        if res <= tol or working_res > tol:
            # Converged for the full problem, or the working subset itself
            # is already infeasible/stuck, which the full problem inherits.
            return x, res, active, warm_out
        offenders = np.flatnonzero(dists > 0.5 * tol)
        offenders = offenders[~np.isin(offenders, active)]
        if offenders.size == 0:
            return x, res, active, warm_out
        if offenders.size > batch:
            order = np.argsort(dists[offenders])[::-1]
            offenders = offenders[order[:batch]]
        active = np.union1d(active, offenders)
        batch = min(batch * 2, 256)
    return x, res, active, warm_out


def feasible_at(inst: QlpInstance, lam: float, tol_feas: float | None = None,
                max_iter: int = _DEFAULT_MAX_ITER):
    """Feasibility oracle at a fixed lam.

    Builds the half-spaces (a_i - lam b_i).x <= 0, projects the origin onto
    their intersection with X, and reports feasible iff the residual is at
    most tol_feas.  Returns (feasible, witness point).
    """
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    tol_feas = tol_feas if tol_feas is not None else _default_tol_feas(inst)
    x, res, _, _ = _project_at(inst, lam, tol_feas / FEAS_TO_PROJ_RATIO, max_iter)
    return res <= tol_feas, x


def solve(inst: QlpInstance, tol_lambda: float | None = None,
          tol_feas: float | None = None, max_iter: int = _DEFAULT_MAX_ITER,
          lambda_hi: float | None = None, bisect_sqrt: bool = False) -> QlpSolution:
    """Lexicographic optimum of the sampled problem.

    Bisects lam down to a bracket of width tol_lambda, keeping the witness
    of the last feasible endpoint; that witness is the minimum-norm
    feasible point at the reported lam.  When ``bisect_sqrt`` is set the
    bisection variable is sqrt(lam), which gives uniform resolution on
    quantities that enter the constraints squared; tol_lambda then applies
    to the sqrt variable.

    lambda_hi is the caller's feasible upper end (checked); without it the
    solver probes by doubling from 1 until feasible, capped at 2**60, and
    raises InfeasibleError past the cap.
    """
    tol_feas = tol_feas if tol_feas is not None else _default_tol_feas(inst)
    tol_proj = tol_feas / FEAS_TO_PROJ_RATIO

    to_lam = (lambda t: t * t) if bisect_sqrt else (lambda t: t)

    # Corrections from the last feasible-side run warm the next level; the
    # half-space normals only rotate slightly between nearby lam values.
    warm = None

    x0, res0, _, warm0 = _project_at(inst, 0.0, tol_proj, max_iter)
    if res0 <= tol_feas:
        return _finalize(inst, 0.0, x0, res0, 0.0, tol_feas, warm0)
    if lambda_hi is not None:
        if lambda_hi <= 0:
            raise ValueError("lambda_hi must be positive when the instance is "
                             "infeasible at lam = 0")
        t_hi = math.sqrt(lambda_hi) if bisect_sqrt else float(lambda_hi)
        x_hi, res_hi, _, w = _project_at(inst, to_lam(t_hi), tol_proj, max_iter)
        if res_hi > tol_feas:
            raise ValueError(
                f"supplied bracket top lambda_hi={lambda_hi} is not feasible "
                f"(residual {res_hi:.3e})")
        warm = w
    else:
        t_hi, x_hi, res_hi = 1.0, None, math.inf
        while to_lam(t_hi) <= _PROBE_CAP:
            x_hi, res_hi, _, w = _project_at(inst, to_lam(t_hi), tol_proj,
                                             max_iter, warm)
            if res_hi <= tol_feas:
                warm = w
                break
            t_hi *= 2.0
        else:
            raise InfeasibleError(
                "no feasible lam up to the probe cap; the instance likely "
                "violates the contract b.x > 0 on X")

    if tol_lambda is None:
        tol_lambda = 1e-6 * t_hi
    if tol_lambda <= 0:
        raise ValueError(f"tol_lambda must be positive, got {tol_lambda}")

    # The correction state matures as the bisection proceeds, and a matured
    # state can certify feasibility at levels an earlier, colder call
    # classified infeasible.  Re-run the bisection with the final state
    # until the accepted endpoint stops moving; every pass reuses warm
    # corrections, so repeat passes are cheap.
    t_lo = 0.0
    for _ in range(4):
        t_lo = 0.0
        while t_hi - t_lo > tol_lambda:
            mid = 0.5 * (t_lo + t_hi)
            x_mid, res_mid, _, w = _project_at(inst, to_lam(mid), tol_proj,
                                               max_iter, warm)
            if res_mid <= tol_feas:
                t_hi, x_hi, res_hi = mid, x_mid, res_mid
                warm = w
            else:
                t_lo = mid
        probe = t_hi - 1.5 * tol_lambda
        if probe <= 0:
            break
        x_p, res_p, _, w = _project_at(inst, to_lam(probe), tol_proj,
                                       max_iter, warm)
        if res_p <= tol_feas:
            t_hi, x_hi, res_hi = probe, x_p, res_p
            warm = w
        else:
            break

    width = to_lam(t_hi) - to_lam(t_lo)
    return _finalize(inst, to_lam(t_hi), x_hi, res_hi, width, tol_feas, warm)


def _finalize(inst, lam, x, res, width, tol_feas, warm=None) -> QlpSolution:
    if inst.nconstraints:
        slack = inst.a @ x - lam * (inst.b @ x)
        max_violation = max(0.0, float(slack.max()))
    else:
        max_violation = 0.0
    clean = res <= tol_feas and max_violation <= tol_feas
    return QlpSolution(
        lambda_star=float(lam),
        x_star=x,
        max_violation=max_violation,
        set_residual=float(res),
        bracket_width=float(width),
        status=SolveStatus.OPTIMAL if clean else SolveStatus.FEASIBILITY_UNCERTAIN,
        warm_state=warm,
    )


def violates(sol: QlpSolution, delta, tol_viol: float | None = None) -> bool:
    """Whether adding the constraint pair delta would strictly raise the cost.

    Equivalent to the cost-increase test: a satisfied constraint leaves the
    (unique) optimum in place, a violated one strictly raises the
    lexicographic cost.  Tested as a.x* > lam* b.x* + tol.
    """
    if sol.status is not SolveStatus.OPTIMAL:
        raise RuntimeError("violation test requires an Optimal solution, "
                           f"got status {sol.status.value}")
    a, b = delta
    lhs = float(np.asarray(a, dtype=float) @ sol.x_star)
    rhs = sol.lambda_star * float(np.asarray(b, dtype=float) @ sol.x_star)
    if tol_viol is None:
        tol_viol = 1e-9 * (1.0 + abs(lhs) + abs(rhs))
    return lhs > rhs + tol_viol


def estimate_violation_probability(sol: QlpSolution, sampler, m: int, rng) -> float:
    """Fraction of m freshly sampled constraint pairs violated by sol.

    ``sampler(rng) -> (a, b)`` draws one pair; determinism follows from the
    supplied stream.
    """
    if m < 1:
        raise ValueError(f"sample count must be >= 1, got {m}")
    hits = sum(1 for _ in range(m) if violates(sol, sampler(rng)))
    return hits / m


# ---------------------------------------------------------------------------
# Essential sets.
# ---------------------------------------------------------------------------


def _subproblem(inst: QlpInstance, indices) -> QlpInstance:
    idx = np.asarray(sorted(indices), dtype=int)
    return QlpInstance(dim=inst.dim, a=inst.a[idx], b=inst.b[idx],
                       common_set=inst.common_set, anchor=inst.anchor,
                       anchor_residual=inst.anchor_residual)


def _matches_full(inst, indices, lam_full, cost_full, tol, max_iter,
                  warm=None):
    """Does the subproblem reproduce (lam, cost) of the full problem?

    Two projections instead of a re-bisection: the subset's optimum cannot
    exceed the full one, so it matches iff (a) the subset is still
    infeasible just below lam_full and (b) its minimum-norm point at
    lam_full has the full cost.  ``warm`` reuses the full solve's final
    corrections: inactive constraints carry zero corrections, so a subset
    that really matches starts at its own fixed point.
    """
    idx = sorted(int(i) for i in indices)
    sub = _subproblem(inst, idx)
    if warm:
        # Remap constraint corrections onto the subproblem's numbering.
        warm_sub = {k: v for k, v in warm.items() if k[0] == "set"}
        for pos, orig in enumerate(idx):
            v = warm.get(("row", orig))
            if v is not None:
                warm_sub[("row", pos)] = v
    else:
        warm_sub = None
    tol_feas = _default_tol_feas(inst)
    tol_proj = tol_feas / FEAS_TO_PROJ_RATIO
    gap = tol * (1.0 + lam_full)
    if lam_full - gap > 0.0:
        # A subset's lam can only drop; feasibility just below lam_full
        # means it dropped by more than the tolerance.
        _, res_below, _, _ = _project_at(sub, lam_full - gap, tol_proj,
                                         max_iter, warm_sub)
        if res_below <= tol_feas:
            return False, None
    x, res, _, _ = _project_at(sub, lam_full, tol_proj, max_iter, warm_sub)
    if res > tol_feas:
        return False, None
    cost = float(x @ x)
    if abs(cost - cost_full) > tol * (1.0 + abs(cost_full)):
        return False, None
    return True, cost


def _active_indices(inst: QlpInstance, sol: QlpSolution, rel_tol: float = 1e-4):
    """Constraints with (a - lam b).x* == 0 up to a normalized tolerance.

    Every minimal cost-matching subset consists of active constraints only:
    a member inactive at the (shared, unique) optimum could be dropped
    without changing the optimum, contradicting minimality.
    """
    if inst.nconstraints == 0:
        return []
    h = inst.a - sol.lambda_star * inst.b
    slack = np.abs(h @ sol.x_star)
    scale = np.linalg.norm(h, axis=1) * float(np.linalg.norm(sol.x_star)) + 1e-30
    return [int(i) for i in np.flatnonzero(slack / scale <= rel_tol)]


def essential_set_exhaustive(inst: QlpInstance, tol: float = 1e-5,
                             max_iter: int = _DEFAULT_MAX_ITER,
                             size_cap: int = 20) -> EssentialSet:
    """Smallest constraint subset reproducing the full optimal cost.

    Cardinality-ascending search with lexicographic-by-index tie-break;
    matching is within tol on both lam (relative) and cost (relative).
    Candidates are pruned to the constraints active at the full optimum,
    which is where every minimal matching subset lives; if tolerance noise
    defeats the pruned search, the full enumeration runs as a fallback.
    """
    n = inst.nconstraints
    if n > size_cap:
        raise ValueError(f"exhaustive search capped at {size_cap} constraints, "
                         f"instance has {n}")
    full = solve(inst, max_iter=max_iter)
    lam_full, cost_full = full.lambda_star, float(full.x_star @ full.x_star)

    candidates = _active_indices(inst, full)
    for pool in (candidates, range(n)):
        pool = list(pool)
        for k in range(len(pool) + 1):
            for combo in itertools.combinations(pool, k):
                ok, cost = _matches_full(inst, combo, lam_full, cost_full, tol,
                                         max_iter, warm=full.warm_state)
                if ok:
                    return EssentialSet(indices=tuple(combo),
                                        lambda_star=lam_full, cost=cost)
    raise AssertionError("unreachable: the full set always matches itself")


def essential_set_greedy(inst: QlpInstance, tol: float = 1e-5,
                         max_iter: int = _DEFAULT_MAX_ITER) -> EssentialSet:
    """Approximate essential set: drop constraints one at a time.

    Keeps a constraint only if removing it changes the optimal cost; the
    result reproduces the full cost but carries no minimality guarantee.
    """
    full = solve(inst, max_iter=max_iter)
    lam_full, cost_full = full.lambda_star, float(full.x_star @ full.x_star)
    kept = list(range(inst.nconstraints))
    cost = cost_full
    for i in range(inst.nconstraints):
        trial = [j for j in kept if j != i]
        ok, trial_cost = _matches_full(inst, trial, lam_full, cost_full, tol,
                                       max_iter, warm=full.warm_state)
        if ok:
            kept = trial
            cost = trial_cost
    return EssentialSet(indices=tuple(kept), lambda_star=lam_full, cost=cost)


# ---------------------------------------------------------------------------
# Serialization.
# ---------------------------------------------------------------------------


def instance_to_json(inst: QlpInstance) -> str:
    doc = {
        "d": inst.dim,
        "constraints": [
            {"a": list(inst.a[i]), "b": list(inst.b[i])}
            for i in range(inst.nconstraints)
        ],
        "common_set": [s.descriptor() for s in inst.common_set],
    }
    return json.dumps(doc, indent=2)


def instance_from_json(text: str) -> QlpInstance:
    doc = json.loads(text)
    d = int(doc["d"])
    rows = doc.get("constraints", [])
    a = np.array([r["a"] for r in rows], dtype=float).reshape(len(rows), d)
    b = np.array([r["b"] for r in rows], dtype=float).reshape(len(rows), d)
    common = [set_from_descriptor(s) for s in doc["common_set"]]
    return QlpInstance.build(a, b, common, dim=d)
