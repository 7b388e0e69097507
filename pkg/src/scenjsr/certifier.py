"""Probabilistic upper bounds on the joint spectral radius from one-step
samples.

Each observation (x, y) turns into one sampled constraint on a quadratic
form P: y'Py <= g^2 x'Px.  In vectorized coordinates that is a ratio
constraint a.p <= lam b.p with a = svec(y y'), b = svec(x x'), p = svec(P)
and lam = g^2, so the whole pipeline is one sampled quasi-linear problem
over X = {P : P >= I, |P|_F <= C}.  The solver bisects on g directly
(uniform resolution on the reported quantity) and the certificate
translates the admissible violation mass eps into a radius correction
through the Beta((d-1)/2, 1/2) quantile, weighted by the conditioning
kappa(P*) = sqrt(det P* / min-eig(P*)^n) and the mode count m.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import qlp, scenario, symmat
from .blackbox import (JsrBracket, SampleSet, SwitchedSystem,
                       assert_no_barabanov, jsr_bruteforce_bounds, observe)
from .rng import Rng

__all__ = [
    "CertConfig",
    "CertStatus",
    "JsrCertificate",
    "MonteCarloReport",
    "observation_constraint",
    "build_qlp",
    "kappa",
    "certify",
    "validate_certificate_montecarlo",
    "certificate_to_json",
    "certificate_from_json",
]


@dataclass(frozen=True)
class CertConfig:
    """Certification parameters.

    ``cap_c`` is the Frobenius cap on the candidate quadratic form; None
    picks 10n, loose enough that it rarely binds while keeping the search
    region compact.  ``num_modes`` is the (known) number of modes of the
    hidden system; the observations themselves do not reveal it.
    """

    num_modes: int
    beta: float = 0.05
    cap_c: float | None = None
    tol_lambda: float | None = None
    tol_feas: float | None = None
    max_iter: int = 20000

    def __post_init__(self):
        if self.num_modes < 1:
            raise ValueError(f"num_modes must be >= 1, got {self.num_modes}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0,1), got {self.beta}")

    def resolve_cap(self, n: int) -> float:
        cap = 10.0 * n if self.cap_c is None else float(self.cap_c)
        if cap < n:
            raise ValueError(f"cap C={cap} must be at least n={n}")
        return cap


class CertStatus(Enum):
    CERTIFIED = "Certified"
    BOUND_UNDEFINED = "BoundUndefined"
    FEASIBILITY_UNCERTAIN = "FeasibilityUncertain"


@dataclass
class JsrCertificate:
    gamma_star: float
    p_star: np.ndarray  # the certified quadratic form, matrix shape
    kappa: float
    eps: float
    d: int
    n: int
    m: int
    n_samples: int
    beta: float
    bound_refined: float | None  # radius bound with tail index d-1
    bound_baseline: float | None  # same formula with tail index d
    bracket_width: float
    status: CertStatus
    suggested_min_samples: int | None = None
    seed: int | None = None


def observation_constraint(x, y):
    """Constraint pair (a, b) of one observation: a = svec(yy'), b = svec(xx')."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return symmat.svec(np.outer(y, y)), symmat.svec(np.outer(x, x))


def build_qlp(obs: SampleSet, cfg: CertConfig) -> qlp.QlpInstance:
    """Vectorized sampled problem over X = {P >= I, |P|_F <= C}.

    The contract b.p > 0 on X holds because x'Px >= |x|^2 > 0 whenever
    P >= I, and the origin is outside X for the same reason.
    """
    n = obs.n
    cap = cfg.resolve_cap(n)
    d = symmat.vec_dim(n)
    a = symmat.svec_batch(np.einsum("ki,kj->kij", obs.ys, obs.ys))
    b = symmat.svec_batch(np.einsum("ki,kj->kij", obs.xs, obs.xs))
    common = [qlp.PsdShiftedCone(n), qlp.FroBall(cap)]
    return qlp.QlpInstance.build(a, b, common, dim=d)


def kappa(p) -> float:
    """Conditioning factor sqrt(det P / min-eig(P)^n) of a positive form."""
    eigs = symmat.sym_eig(p).eigenvalues
    smallest = float(eigs[0])
    if smallest <= 0:
        raise ValueError(f"matrix must be positive definite, min eig {smallest}")
    n = eigs.size
    return math.sqrt(float(np.prod(eigs)) / smallest**n)


def _corrected_bound(gamma: float, kap: float, eps: float, d: int,
                     m: int) -> float | None:
    """gamma / sqrt(1 - q) with q the Beta((d-1)/2, 1/2) quantile of
    eps*kappa/m; None when the quantile argument leaves [0, 1) or d < 2."""
    if d < 2:
        return None
    arg = eps * kap / m
    if arg >= 1.0:
        return None
    q = scenario.inv_reg_inc_beta(arg, (d - 1) / 2.0, 0.5)
    if q >= 1.0:
        return None
    return gamma / math.sqrt(1.0 - q)


def _suggest_min_samples(beta: float, d: int, kap: float, m: int) -> int | None:
    """Smallest N making eps(beta, d-1, N) * kappa / m < 1, if any."""
    target = m / kap

    def ok(n_samples: int) -> bool:
        q = scenario.ConfidenceQuery(beta=beta, k=d - 1, n_samples=n_samples)
        return scenario.epsilon_for_confidence(q) < target

    lo = d
    hi = d
    while not ok(hi):
        hi *= 2
        if hi > 2**40:
            return None
    if hi == lo:
        return lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _certify_full(obs: SampleSet, cfg: CertConfig, seed: int | None = None):
    n = obs.n
    n_samples = len(obs)
    d = symmat.vec_dim(n)
    if n_samples < d:
        raise ValueError(
            f"need at least d = n(n+1)/2 = {d} samples for the guarantee, "
            f"got N = {n_samples}")
    inst = build_qlp(obs, cfg)

    x_norms = np.linalg.norm(obs.xs, axis=1)
    y_norms = np.linalg.norm(obs.ys, axis=1)
    gamma_hi = float((y_norms / x_norms).max()) if n_samples else 0.0

    sol = qlp.solve(
        inst,
        tol_lambda=cfg.tol_lambda,
        tol_feas=cfg.tol_feas,
        max_iter=cfg.max_iter,
        lambda_hi=gamma_hi**2 if gamma_hi > 0 else None,
        bisect_sqrt=True,
    )
    gamma_star = math.sqrt(sol.lambda_star)
    p_star = symmat.smat(sol.x_star)
    kap = kappa(p_star)

    eps = scenario.epsilon_for_confidence(
        scenario.ConfidenceQuery(beta=cfg.beta, k=d - 1, n_samples=n_samples))
    bound_refined = _corrected_bound(gamma_star, kap, eps, d, cfg.num_modes)
    eps_baseline = scenario.epsilon_for_confidence(
        scenario.ConfidenceQuery(beta=cfg.beta, k=d, n_samples=n_samples))
    bound_baseline = _corrected_bound(gamma_star, kap, eps_baseline, d,
                                      cfg.num_modes)

    suggested = None
    if sol.status is qlp.SolveStatus.FEASIBILITY_UNCERTAIN:
        status = CertStatus.FEASIBILITY_UNCERTAIN
    elif bound_refined is None:
        status = CertStatus.BOUND_UNDEFINED
        if d >= 2:
            suggested = _suggest_min_samples(cfg.beta, d, kap, cfg.num_modes)
    else:
        status = CertStatus.CERTIFIED

    cert = JsrCertificate(
        gamma_star=gamma_star,
        p_star=p_star,
        kappa=kap,
        eps=eps,
        d=d,
        n=n,
        m=cfg.num_modes,
        n_samples=n_samples,
        beta=cfg.beta,
        bound_refined=bound_refined,
        bound_baseline=bound_baseline,
        bracket_width=sol.bracket_width,
        status=status,
        suggested_min_samples=suggested,
        seed=seed,
    )
    return cert, sol


def certify(obs: SampleSet, cfg: CertConfig, seed: int | None = None) -> JsrCertificate:
    """Certificate for the hidden system behind the observations.

    Requires N >= d = n(n+1)/2 and, by caller assertion, that no hidden
    mode admits an invariant quadratic form (not checkable from black-box
    data; the CLI makes the assertion explicit).
    """
    return _certify_full(obs, cfg, seed)[0]


# ---------------------------------------------------------------------------
# Monte Carlo validation (white-box harness).
# ---------------------------------------------------------------------------


@dataclass
class MonteCarloReport:
    n: int
    m: int
    n_samples: int
    d: int
    beta: float
    eps: float
    trials: int
    fresh_samples: int
    whitebox_lower: float
    whitebox_upper: float
    freq_bound_failure: float
    freq_violation_exceeds_eps: float
    threshold: float  # beta + 3 * binomial std error
    n_undefined: int
    n_uncertain: int
    rows: list = field(default_factory=list)  # per-trial dicts, sorted by trial

    def to_json(self) -> str:
        doc = dict(self.__dict__)
        return json.dumps(doc, indent=2, sort_keys=True)


def _mc_trial(payload):
    (modes, trial, rng_seed, n_samples, cfg_kwargs, eps, fresh_samples,
     whitebox_lower) = payload
    sys = SwitchedSystem(tuple(np.array(m) for m in modes))
    cfg = CertConfig(**cfg_kwargs)
    rng = Rng(rng_seed)
    draw = rng.derive(0)
    obs = SampleSet.from_observations(observe(sys, draw) for _ in range(n_samples))
    cert, sol = _certify_full(obs, cfg)

    uncertain = cert.status is CertStatus.FEASIBILITY_UNCERTAIN
    if uncertain:
        v_hat = None
        exceeds = True  # conservative: an unsettled solve cannot certify
    else:
        fresh = rng.derive(1)

        def sampler(stream):
            o = observe(sys, stream)
            return observation_constraint(o.x, o.y)

        v_hat = qlp.estimate_violation_probability(sol, sampler, fresh_samples,
                                                   fresh)
        exceeds = v_hat > eps
    bound_failed = (cert.bound_refined is not None
                    and cert.bound_refined < whitebox_lower)
    return {
        "trial": trial,
        "gamma_star": cert.gamma_star,
        "kappa": cert.kappa,
        "bound_refined": cert.bound_refined,
        "bound_baseline": cert.bound_baseline,
        "status": cert.status.value,
        "v_hat": v_hat,
        "violation_exceeds_eps": exceeds,
        "bound_failed": bound_failed,
    }


def validate_certificate_montecarlo(sys: SwitchedSystem, cfg: CertConfig,
                                    n_samples: int, trials: int, rng: Rng,
                                    fresh_samples: int = 2000, depth: int = 8,
                                    workers: int = 1) -> MonteCarloReport:
    """Empirical check of the certificate guarantee on a white-box system.

    Runs independent certifications and compares two failure frequencies
    against the design level: the estimated violation mass exceeding eps,
    and the refined bound dipping below the brute-force lower bracket.
    Trials with an uncertain solve count conservatively as failures of the
    violation check and are reported separately.  Deterministic given the
    stream; trial order never affects the aggregate.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    assert_no_barabanov(sys)
    d = symmat.vec_dim(sys.n)
    eps = scenario.epsilon_for_confidence(
        scenario.ConfidenceQuery(beta=cfg.beta, k=d - 1, n_samples=n_samples))
    bracket = jsr_bruteforce_bounds(sys, depth)

    cfg_kwargs = {
        "num_modes": cfg.num_modes, "beta": cfg.beta, "cap_c": cfg.cap_c,
        "tol_lambda": cfg.tol_lambda, "tol_feas": cfg.tol_feas,
        "max_iter": cfg.max_iter,
    }
    modes_payload = [m.tolist() for m in sys.modes]
    payloads = [
        (modes_payload, t, rng.derive(t).seed, n_samples, cfg_kwargs, eps,
         fresh_samples, bracket.lower)
        for t in range(trials)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_mc_trial, payloads))
    else:
        rows = [_mc_trial(p) for p in payloads]
    rows.sort(key=lambda r: r["trial"])

    n_undefined = sum(1 for r in rows if r["bound_refined"] is None)
    n_uncertain = sum(1 for r in rows if r["status"]
                      == CertStatus.FEASIBILITY_UNCERTAIN.value)
    freq_bound = sum(1 for r in rows if r["bound_failed"]) / trials
    freq_viol = sum(1 for r in rows if r["violation_exceeds_eps"]) / trials
    threshold = cfg.beta + 3.0 * math.sqrt(cfg.beta * (1.0 - cfg.beta) / trials)
    return MonteCarloReport(
        n=sys.n, m=sys.m, n_samples=n_samples, d=d, beta=cfg.beta, eps=eps,
        trials=trials, fresh_samples=fresh_samples,
        whitebox_lower=bracket.lower, whitebox_upper=bracket.upper,
        freq_bound_failure=freq_bound, freq_violation_exceeds_eps=freq_viol,
        threshold=threshold, n_undefined=n_undefined, n_uncertain=n_uncertain,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# Certificate serialization.
# ---------------------------------------------------------------------------


def certificate_to_json(cert: JsrCertificate) -> str:
    doc = {
        "n": cert.n,
        "m": cert.m,
        "N": cert.n_samples,
        "d": cert.d,
        "beta": cert.beta,
        "eps": cert.eps,
        "gamma_star": cert.gamma_star,
        "P_star_svec": [float(v) for v in symmat.svec(cert.p_star)],
        "kappa": cert.kappa,
        "bound_this_paper": cert.bound_refined,
        "bound_baseline": cert.bound_baseline,
        "status": cert.status.value,
        "bracket_width": cert.bracket_width,
        "seed": cert.seed,
        "suggested_min_N": cert.suggested_min_samples,
    }
    return json.dumps(doc, indent=2)


def certificate_from_json(text: str) -> JsrCertificate:
    doc = json.loads(text)
    return JsrCertificate(
        gamma_star=float(doc["gamma_star"]),
        p_star=symmat.smat(np.array(doc["P_star_svec"], dtype=float)),
        kappa=float(doc["kappa"]),
        eps=float(doc["eps"]),
        d=int(doc["d"]),
        n=int(doc["n"]),
        m=int(doc["m"]),
        n_samples=int(doc["N"]),
        beta=float(doc["beta"]),
        bound_refined=doc["bound_this_paper"],
        bound_baseline=doc["bound_baseline"],
        bracket_width=float(doc["bracket_width"]),
        status=CertStatus(doc["status"]),
        suggested_min_samples=doc.get("suggested_min_N"),
        seed=doc.get("seed"),
    )
