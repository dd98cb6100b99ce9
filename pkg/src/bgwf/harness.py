"""Monte Carlo experiment drivers with reproducible seeding.

Replicate j of an experiment draws from a stream keyed by
(master_seed, j) only, so reports are bit-identical for any worker count.
Reductions iterate replicates in index order.

CSV schema (one row per experiment/size/toll):
mode,family,gamma,kappa,n,R,alpha_prime,beta,estimate,stderr,theory,zscore,drops,seed
Exit codes: 0 all checks pass, 2 some verdict failed, 3 invalid report.
"""

from __future__ import annotations

import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import theory
from .continuum import (
    DEFAULT_LEVELS,
    level_decomposition,
    psi_level_sweep,
    sample_excursion,
    sweep_from_decomposition,
)
from .functionals import TollFunction, a_measure, rescaled_theorem1_sum
from .offspring import OffspringModel, normalizer, snap_to_support
from .sampler import BudgetExhausted, sample_conditioned

log = logging.getLogger("bgwf")

CSV_COLUMNS = (
    "mode,family,gamma,kappa,n,R,alpha_prime,beta,estimate,stderr,theory,zscore,drops,seed"
)

MODE_MOMENT = "moment"
MODE_PHASE = "phase-scan"
MODE_LLT = "llt"
MODE_HEIGHT = "height-moments"
MODE_TAIL = "tail"
MODE_CONTINUUM = "continuum"

VERDICT_DIVERGING = "diverging"
VERDICT_CONVERGING = "converging"
VERDICT_BOUNDARY = "boundary"

MAX_DROP_FRACTION = 0.01


@dataclass
class ExperimentConfig:
    """Shared configuration for all harness modes.

    Sizes are snapped upward to the nearest supported tree size at
    construction time, so the reported n may differ from the requested one
    (e.g. even sizes under a span-2 offspring law).
    """

    mode: str
    model: OffspringModel | None = None
    sizes: list[int] = field(default_factory=list)
    replicates: int = 2
    tolls: list[TollFunction] = field(default_factory=list)
    alpha_primes: list[float] = field(default_factory=list)
    beta: float = 0.0
    p_list: list[float] = field(default_factory=list)
    master_seed: int = 0
    workers: int = 1
    kappa: float = 0.5  # continuum mode without a discrete model
    m_grid: int = 10_000
    levels: int = DEFAULT_LEVELS
    diverge_factor: float = 1.5
    converge_band: float = 0.20
    max_attempts: int | None = None

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least 2 replicates")
        if self.model is not None and self.mode != MODE_LLT:
            snapped = [snap_to_support(self.model, n) for n in self.sizes]
            for want, got in zip(self.sizes, snapped):
                if want != got:
                    log.info("size %d not in the support; snapped to %d", want, got)
            self.sizes = snapped


@dataclass
class McRow:
    mode: str
    family: str
    gamma: float
    kappa: float
    n: int | None
    R: int
    alpha_prime: float | None
    beta: float | None
    estimate: float
    stderr: float | None
    theory: float | None
    zscore: float | None
    drops: int
    seed: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS.split(",")}


@dataclass
class McReport:
    rows: list[McRow]
    checks: list[tuple[str, bool]] = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def invalid(self) -> bool:
        return any(r.drops > MAX_DROP_FRACTION * r.R for r in self.rows if r.R)

    def exit_code(self) -> int:
        if self.invalid:
            return 3
        if any(not ok for _, ok in self.checks):
            return 2
        return 0

    def to_csv(self, path_or_buf=None) -> str:
        buf = io.StringIO()
        buf.write(CSV_COLUMNS + "\n")
        for r in self.rows:
            buf.write(",".join(_fmt(v) for v in r.as_dict().values()) + "\n")
        text = buf.getvalue()
        if path_or_buf is not None:
            if hasattr(path_or_buf, "write"):
                path_or_buf.write(text)
            else:
                with open(path_or_buf, "w") as fh:
                    fh.write(text)
        return text

    def to_json(self, path=None) -> str:
        text = json.dumps([r.as_dict() for r in self.rows], indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def replicate_rng(master_seed: int, replicate: int) -> np.random.Generator:
    """Stream for one replicate; depends only on (master_seed, replicate)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(replicate,)))


def _map_ordered(fn, count: int, workers: int) -> list:
    if workers <= 1:
        return [fn(j) for j in range(count)]
    chunk = max(1, count // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(count), chunksize=chunk))


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / math.sqrt(len(values)))


# ---------------------------------------------------------------------------
# replicate workers (module level so process pools can pickle them)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _TreeTask:
    model: OffspringModel
    n: int
    master_seed: int
    tolls: tuple
    max_attempts: int | None

    def __call__(self, j: int):
        rng = replicate_rng(self.master_seed, j)
        try:
            tree = sample_conditioned(self.model, self.n, rng, self.max_attempts)
        except BudgetExhausted:
            return None
        b_over_n = normalizer(self.model, self.n) / self.n
        vals = []
        for toll in self.tolls:
            exps = toll.exponents
            if exps is not None:
                fv = rescaled_theorem1_sum(tree, self.model, exps[0] + 1.0, exps[1])
            else:
                fv = a_measure(tree, self.model, toll, internal_only=True)
            vals.append(fv.value)
        return vals, b_over_n * tree.height


@dataclass(frozen=True)
class _ExcursionTask:
    kappa: float
    m_grid: int
    levels: int
    master_seed: int
    tolls: tuple

    def __call__(self, j: int):
        rng = replicate_rng(self.master_seed, j)
        exc = sample_excursion(self.m_grid, rng)
        c = math.sqrt(2.0 / self.kappa)  # height rescaling for mechanism kappa*l^2
        decomp = level_decomposition(exc, self.levels)
        out = []
        for toll in self.tolls:
            wrapped = lambda x, u: toll(x, c * u)
            if decomp is None:
                out.append(c * psi_level_sweep(exc, wrapped, self.levels))
            else:
                out.append(c * sweep_from_decomposition(decomp, wrapped))
        return out


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------


def _toll_theory(model: OffspringModel, toll: TollFunction, height_moments: dict) -> float | None:
    """Closed-form (gamma = 2) or simulation-calibrated (gamma < 2) theory value."""
    gamma, kappa = model.gamma, model.kappa
    exps = toll.exponents
    if exps is not None:
        alpha, beta = exps
        if theory.finiteness(gamma, alpha, beta) == theory.AS_INFINITE:
            return None
        if gamma == 2.0:
            return theory.brownian_moment(kappa, alpha, beta)
        hm = height_moments.get(beta)
        if hm is None:
            return None
        log.info("theory value for %s is simulation-calibrated (E[H^%g] estimated)", toll.label, beta)
        return theory.stable_moment(theory.MomentSpec(gamma, kappa, alpha, beta), hm)
    if toll.kind == "power-log":
        try:
            return theory.mass_only_moment(
                gamma, kappa, lambda x: abs(math.log(x)) * x ** toll.alpha, power_exponent=toll.alpha
            )
        except theory.InfiniteMomentError:
            return None
    return None


def run_moment(config: ExperimentConfig) -> McReport:
    """Mean of the rescaled sums over R trees per size, against theory values."""
    t0 = time.time()
    model = config.model
    tolls = list(config.tolls) or [TollFunction.power(a - 1.0, config.beta) for a in config.alpha_primes]
    for toll in tolls:
        exps = toll.exponents
        if exps is not None:
            verdict = theory.phase_regime(model.gamma, exps[0] + 1.0, exps[1])
            if verdict.regime != theory.GLOBAL:
                log.warning("toll %s is outside the global regime (margin %g); the sum diverges",
                            toll.label, verdict.margin)
    per_n: dict[int, tuple] = {}
    for n in config.sizes:
        task = _TreeTask(model, n, config.master_seed, tuple(tolls), config.max_attempts)
        results = _map_ordered(task, config.replicates, config.workers)
        drops = sum(1 for r in results if r is None)
        vals = np.array([r[0] for r in results if r is not None])
        heights = np.array([r[1] for r in results if r is not None])
        per_n[n] = (vals, heights, drops)

    # E[H^beta] estimates from the largest size, for gamma < 2 theory values
    n_max = max(config.sizes)
    hmax = per_n[n_max][1]
    height_moments = {}
    for toll in tolls:
        if toll.exponents is not None:
            beta = toll.exponents[1]
            height_moments.setdefault(beta, float(np.mean(hmax**beta)) if len(hmax) else None)

    rows = []
    for n in config.sizes:
        vals, heights, drops = per_n[n]
        for i, toll in enumerate(tolls):
            est, se = _mean_stderr(vals[:, i]) if vals.size else (math.nan, None)
            th = _toll_theory(model, toll, height_moments)
            z = (est - th) / se if (th is not None and se) else None
            exps = toll.exponents
            rows.append(
                McRow(MODE_MOMENT, model.family, model.gamma, model.kappa, n,
                      config.replicates, exps[0] + 1.0 if exps else None,
                      exps[1] if exps else None, est, se, th, z, drops, config.master_seed)
            )
    return McReport(rows, wall_time=time.time() - t0)


def run_phase_scan(config: ExperimentConfig) -> McReport:
    """Growth-based convergence verdict per alpha', against the phase predicate.

    Diverging: every consecutive size step grows by >= diverge_factor per
    decade.  Converging: top-decade means within converge_band.  Otherwise
    boundary.  A toll matches when the verdict agrees with the predicted
    regime (global -> converging, non-global -> diverging).
    """
    t0 = time.time()
    model = config.model
    if len(config.sizes) < 3 or max(config.sizes) < 10 * min(config.sizes):
        log.warning("phase scan wants >= 3 sizes spanning a decade; got %s", config.sizes)
    tolls = [TollFunction.power(a - 1.0, config.beta) for a in config.alpha_primes]
    means: dict[tuple[int, int], tuple] = {}
    drops_by_n = {}
    for n in config.sizes:
        task = _TreeTask(model, n, config.master_seed, tuple(tolls), config.max_attempts)
        results = _map_ordered(task, config.replicates, config.workers)
        drops_by_n[n] = sum(1 for r in results if r is None)
        vals = np.array([r[0] for r in results if r is not None])
        for i in range(len(tolls)):
            means[(n, i)] = _mean_stderr(vals[:, i])

    rows = []
    verdicts = {}
    checks = []
    sizes = sorted(config.sizes)
    for i, aprime in enumerate(config.alpha_primes):
        seq = [means[(n, i)][0] for n in sizes]
        factors = []
        for (n1, m1), (n2, m2) in zip(zip(sizes, seq), zip(sizes[1:], seq[1:])):
            decades = math.log10(n2 / n1)
            factors.append((m2 / m1) ** (1.0 / decades) if m1 > 0 else math.inf)
        top_ratio = seq[-1] / seq[-2] if seq[-2] else math.inf
        if all(f >= config.diverge_factor for f in factors):
            verdict = VERDICT_DIVERGING
        elif abs(top_ratio - 1.0) <= config.converge_band:
            verdict = VERDICT_CONVERGING
        else:
            verdict = VERDICT_BOUNDARY
        predicted = theory.phase_regime(model.gamma, aprime, config.beta)
        want = VERDICT_CONVERGING if predicted.regime == theory.GLOBAL else VERDICT_DIVERGING
        verdicts[aprime] = {
            "verdict": verdict,
            "predicted_regime": predicted.regime,
            "margin": predicted.margin,
            "growth_factors_per_decade": factors,
            "match": verdict == want,
        }
        checks.append((f"phase alpha'={aprime:g}", verdict == want))
        for n in sizes:
            est, se = means[(n, i)]
            rows.append(
                McRow(MODE_PHASE, model.family, model.gamma, model.kappa, n,
                      config.replicates, aprime, config.beta, est, se, None, None,
                      drops_by_n[n], config.master_seed)
            )
    return McReport(rows, checks=checks, extras={"verdicts": verdicts}, wall_time=time.time() - t0)


def exact_walk_point_probability(model: OffspringModel, n: int, target: int) -> float:
    """P(S_n = target) by O(n^2) binary-power convolution of the pmf.

    Values above the target cannot contribute (all summands are >= 0), so
    supports are truncated at target+1 throughout; the result is exact up to
    float rounding.
    """
    if target < 0:
        return 0.0
    base = np.asarray(model.pmf(np.arange(target + 1)), dtype=float)
    result = None
    e = n
    while e:
        if e & 1:
            result = base.copy() if result is None else np.convolve(result, base)[: target + 1]
        e >>= 1
        if e:
            base = np.convolve(base, base)[: target + 1]
    return float(result[target])


def run_llt(model: OffspringModel, n_list: list[int], master_seed: int = 0) -> McReport:
    """Exact local-limit check: b_n P(S_n = n-1) / span against g(0).

    Sizes are taken as given (no support snapping) so that span obstructions
    show up as exact zeros.  For n <= 9 the Otter-Dwass identity
    n P(|tau| = n) = P(S_n = n-1) is verified against tree enumeration.
    """
    t0 = time.time()
    rows = []
    checks = []
    limit = theory.g0(model.gamma, model.kappa)
    for n in n_list:
        if n > 10_000:
            raise ValueError("exact convolution limited to n <= 10^4")
        p = exact_walk_point_probability(model, n, n - 1)
        scaled = normalizer(model, n) * p / model.span
        rows.append(
            McRow(MODE_LLT, model.family, model.gamma, model.kappa, n, 0, None, None,
                  scaled, 0.0, limit, None, 0, master_seed)
        )
        if n <= 9:
            p_tree = _enumerated_tree_probability(model, n)
            ok = abs(n * p_tree - p) <= 1e-12
            checks.append((f"otter-dwass n={n}", ok))
    return McReport(rows, checks=checks, wall_time=time.time() - t0)


def _enumerated_tree_probability(model: OffspringModel, n: int) -> float:
    """P(|tau| = n) by explicit enumeration of all ordered trees of size n."""
    total = 0.0
    for seq in iter_degree_sequences(n):
        total += float(np.prod(model.pmf(np.array(seq))))
    return total


def iter_degree_sequences(n: int):
    """All depth-first degree sequences of ordered trees with n vertices."""
    seq = [0] * n

    def rec(pos: int, remaining: int, open_slots: int):
        if remaining == 0:
            if open_slots == 0:
                yield tuple(seq)
            return
        if open_slots == 0 or open_slots > remaining:
            return
        for d in range(remaining):
            seq[pos] = d
            yield from rec(pos + 1, remaining - 1, open_slots - 1 + d)

    yield from rec(0, n, 1)


def run_height_moments(config: ExperimentConfig) -> McReport:
    """Empirical p-th moments of (b_n/n) H(tree) across sizes.

    Rows use the beta column for p.  A moment is flagged (check fails) if it
    grows by more than converge_band across the top decade of sizes, which
    would contradict the uniform-boundedness of these moments.
    """
    t0 = time.time()
    model = config.model
    heights_by_n = {}
    drops_by_n = {}
    for n in config.sizes:
        task = _TreeTask(model, n, config.master_seed, (), config.max_attempts)
        results = _map_ordered(task, config.replicates, config.workers)
        drops_by_n[n] = sum(1 for r in results if r is None)
        heights_by_n[n] = np.array([r[1] for r in results if r is not None])

    rows = []
    checks = []
    sizes = sorted(config.sizes)
    for p in config.p_list:
        per_n = {}
        for n in sizes:
            est, se = _mean_stderr(heights_by_n[n] ** p)
            per_n[n] = est
            th = 2.0 * (math.pi / model.kappa) ** (p / 2.0) * theory.riemann_xi(p) if model.gamma == 2.0 else None
            z = (est - th) / se if (th is not None and se) else None
            rows.append(
                McRow(MODE_HEIGHT, model.family, model.gamma, model.kappa, n,
                      config.replicates, None, p, est, se, th, z, drops_by_n[n],
                      config.master_seed)
            )
        if len(sizes) >= 2:
            growth = per_n[sizes[-1]] / per_n[sizes[-2]]
            checks.append((f"height moment p={p:g} stable", growth <= 1.0 + config.converge_band))
    return McReport(rows, checks=checks, wall_time=time.time() - t0)


def _tail_exponent_fit(ys: np.ndarray, neg_log_prob: np.ndarray, sign: int) -> float:
    """Exponent a minimizing the residual of -log(prob) ~ c*y^(sign*a) + b.

    A plain log(-log) regression is contaminated by the polynomial prefactor
    of the tail law (for the Brownian height it biases the lower exponent
    from 2 up to ~3 on any reachable window); the free intercept b absorbs
    the slowly varying prefactor so the fitted a tracks the true stretch
    exponent.
    """
    best_a, best_ssr = None, math.inf
    for a in np.arange(0.3, 6.001, 0.01):
        design = np.vstack([ys ** (sign * a), np.ones_like(ys)]).T
        coef, res, *_ = np.linalg.lstsq(design, neg_log_prob, rcond=None)
        ssr = float(res[0]) if len(res) else float(((design @ coef - neg_log_prob) ** 2).sum())
        if coef[0] <= 0.0:
            continue  # the decay term must carry positive weight
        if ssr < best_ssr:
            best_a, best_ssr = float(a), ssr
    return best_a


def run_tail_profile(config: ExperimentConfig) -> McReport:
    """Tail-exponent fits for (b_n/n) H at the largest configured size.

    Lower tail: -log P(height <= y) behaves like c y^(-a) with
    a = gamma/(gamma-1); upper tail like c y^b with b up to gamma.  Pass
    requires the lower fit within +-25% of its target (two-sided for the
    upper fit only when gamma = 2, where b = 2 is attained).
    """
    t0 = time.time()
    model = config.model
    n = max(config.sizes)
    task = _TreeTask(model, n, config.master_seed, (), config.max_attempts)
    results = _map_ordered(task, config.replicates, config.workers)
    drops = sum(1 for r in results if r is None)
    y = np.sort(np.array([r[1] for r in results if r is not None]))
    R = len(y)
    rows = []
    checks = []
    extras = {}

    def _fit(lo_q, hi_q, survival: bool):
        if int(lo_q * R) < 8:
            log.warning("tail window too small (%d samples); no verdict", int(lo_q * R))
            return None
        # anchor at log-spaced quantile levels: the ordinate -log q is exact,
        # the empirical quantile y_q concentrates at rate sqrt(R q)
        qs = np.exp(np.linspace(math.log(lo_q), math.log(hi_q), 12))
        if survival:
            ys = np.quantile(y, 1.0 - qs)
        else:
            ys = np.quantile(y, qs)
        yv, idx = np.unique(ys, return_index=True)
        qv = qs[idx]
        if len(yv) < 4:
            log.warning("tail window degenerate (%d distinct heights); no verdict", len(yv))
            return None
        return _tail_exponent_fit(yv, -np.log(qv), sign=1 if survival else -1)

    alpha_target = model.gamma / (model.gamma - 1.0)
    alpha_hat = _fit(0.002, 0.05, survival=False)
    beta_hat = _fit(0.002, 0.05, survival=True)
    rows.append(McRow(MODE_TAIL, model.family, model.gamma, model.kappa, n, config.replicates,
                      None, None, alpha_hat if alpha_hat is not None else math.nan,
                      None, alpha_target, None, drops, config.master_seed))
    rows.append(McRow(MODE_TAIL, model.family, model.gamma, model.kappa, n, config.replicates,
                      None, None, beta_hat if beta_hat is not None else math.nan,
                      None, model.gamma, None, drops, config.master_seed))
    if alpha_hat is not None:
        checks.append(("lower tail exponent", abs(alpha_hat - alpha_target) <= 0.25 * alpha_target))
    if beta_hat is not None:
        if model.gamma == 2.0:
            checks.append(("upper tail exponent", abs(beta_hat - model.gamma) <= 0.25 * model.gamma))
        else:
            checks.append(("upper tail exponent", beta_hat <= 1.25 * model.gamma))
    extras["fits"] = {"lower_exponent": alpha_hat, "lower_target": alpha_target,
                      "upper_exponent": beta_hat, "upper_target": model.gamma}
    return McReport(rows, checks=checks, extras=extras, wall_time=time.time() - t0)


def run_continuum(config: ExperimentConfig) -> McReport:
    """Mean of the level-sweep functional over Brownian excursions vs theory.

    Only the Brownian mechanism kappa*lambda^2 is simulated; general
    gamma < 2 continuum trees are approximated by large discrete trees
    through run_moment instead.
    """
    t0 = time.time()
    if config.model is not None and config.model.gamma != 2.0:
        raise ValueError("continuum simulation supports gamma = 2 only")
    kappa = config.model.kappa if config.model is not None else config.kappa
    tolls = list(config.tolls)
    for toll in tolls:
        exps = toll.exponents
        if exps is not None and theory.finiteness(2.0, exps[0], exps[1]) == theory.AS_INFINITE:
            raise theory.InfiniteMomentError(
                f"toll {toll.label}: moment infinite (2a+b+1 = {2 * exps[0] + exps[1] + 1:g} <= 0)"
            )
    task = _ExcursionTask(kappa, config.m_grid, config.levels, config.master_seed, tuple(tolls))
    results = _map_ordered(task, config.replicates, config.workers)
    vals = np.array(results)
    rows = []
    for i, toll in enumerate(tolls):
        est, se = _mean_stderr(vals[:, i])
        exps = toll.exponents
        th = theory.brownian_moment(kappa, *exps) if exps is not None else None
        z = (est - th) / se if (th is not None and se) else None
        rows.append(
            McRow(MODE_CONTINUUM, "brownian", 2.0, kappa, None, config.replicates,
                  exps[0] + 1.0 if exps else None, exps[1] if exps else None,
                  est, se, th, z, 0, config.master_seed)
        )
    return McReport(rows, wall_time=time.time() - t0)


# ---------------------------------------------------------------------------
# quick self test (golden values)
# ---------------------------------------------------------------------------


def run_selftest() -> tuple[bool, list[str]]:
    """Fast golden-value suite; returns (all passed, report lines)."""
    from .offspring import catalan_model, geometric_model, make_stable_family
    from .functionals import a_measure, b1_index
    from .sampler import build_and_annotate

    lines = []
    ok_all = True

    def check(name, got, want, tol=1e-9):
        nonlocal ok_all
        ok = abs(got - want) <= tol * max(1.0, abs(want))
        ok_all &= ok
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}: got {got:.10g}, want {want:.10g}")

    check("xi(2) = pi/6", theory.riemann_xi(2.0), math.pi / 6.0)
    check("xi(1)", theory.riemann_xi(1.0), 0.5)
    check("g(0) catalan", theory.g0(2.0, 0.5), 1.0 / math.sqrt(2.0 * math.pi))
    check("brownian moment (0,0)", theory.brownian_moment(0.5, 0.0, 0.0), math.sqrt(math.pi / 2.0))
    check("brownian moment (1,0)", theory.brownian_moment(0.5, 1.0, 0.0), 0.6266570686577501)
    cat = catalan_model()
    check("catalan b_9", normalizer(cat, 9), 3.0)
    check("geometric sigma^2", geometric_model().sigma2, 2.0)
    check("stable pmf(2)", float(make_stable_family(1.5, 0.5).pmf(2)), 0.1875)
    cherry = build_and_annotate(np.array([2, 0, 0]))
    check("cherry a-measure", a_measure(cherry, cat, TollFunction.power(0, 0)).value,
          math.sqrt(3.0) / 3.0)
    path4 = build_and_annotate(np.array([1, 1, 1, 0]))
    check("b1 of 4-path", b1_index(path4), 1.5)
    p = exact_walk_point_probability(cat, 101, 100)
    check("llt catalan n=101", math.sqrt(101) * p / 2, 0.3960100764148143, tol=1e-9)
    return ok_all, lines
