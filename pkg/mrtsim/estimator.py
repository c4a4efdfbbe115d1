"""Centered-treatment least squares for proximal effects, with moderators.

The outcome is regressed on ``[1, controls, (A - p), (A - p) * moderators]``
over available rows. Standard errors are cluster-robust by participant with
the usual small-sample correction G/(G-1) * (n-1)/(n-p) and t(G-1) reference.
"""

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .exceptions import RankDeficiencyError, ValidationError
from .model import NO_RESPONSE
from .pipeline import AnalysisRow, codes_for

logger = logging.getLogger(__name__)

TREATMENT_TERM = "A_centered"
RANK_TOLERANCE = 1e-10
OUTCOME_VARIANTS = ("zero", "redundant", "phone_fit")

# covariates usable as controls or moderators; all are fixed before randomization
NUMERIC_COVARIATES = ("day_index", "stress", "typicality", "recent_treatment_count", "weekend")
CATEGORICAL_COVARIATES = ("slot_index", "location_category", "weather")
COVARIATES = NUMERIC_COVARIATES + CATEGORICAL_COVARIATES


@dataclass(frozen=True)
class EffectSpec:
    component_id: str
    outcome_variant: str = "zero"
    controls: Tuple[str, ...] = ()
    moderators: Tuple[str, ...] = ()
    # per-row weight hook; None means unit weights (constant probability)
    weights: Optional[Callable[[AnalysisRow], float]] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "moderators", tuple(self.moderators))
        if self.outcome_variant not in OUTCOME_VARIANTS:
            raise ValidationError(
                "unknown outcome variant {!r}".format(self.outcome_variant), "outcome_variant"
            )
        for name in self.controls + self.moderators:
            if name not in COVARIATES:
                raise ValidationError(
                    "{!r} is not a pre-treatment covariate".format(name), "moderators"
                )

    def with_moderators(self, *moderators: str) -> "EffectSpec":
        merged = self.moderators + tuple(m for m in moderators if m not in self.moderators)
        return replace(self, moderators=merged)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "component_id": self.component_id,
            "outcome_variant": self.outcome_variant,
            "controls": list(self.controls),
            "moderators": list(self.moderators),
        }


@dataclass(frozen=True)
class EffectEstimate:
    spec: EffectSpec
    terms: Tuple[str, ...]
    coefficients: Tuple[float, ...]
    standard_errors: Tuple[float, ...]
    rows_used: int
    participants: int
    # excluded rows by missingness code
    excluded: Dict[str, int]

    @property
    def df(self) -> int:
        return self.participants - 1

    def coefficient(self, term: str = TREATMENT_TERM) -> float:
        return self.coefficients[self.terms.index(term)]

    def standard_error(self, term: str = TREATMENT_TERM) -> float:
        return self.standard_errors[self.terms.index(term)]

    def t_value(self, term: str = TREATMENT_TERM) -> float:
        se = self.standard_error(term)
        return self.coefficient(term) / se if se > 0 else math.inf

    def p_value(self, term: str = TREATMENT_TERM) -> float:
        return float(2 * stats.t.sf(abs(self.t_value(term)), self.df))

    def confidence_interval(self, term: str = TREATMENT_TERM, level: float = 0.95) -> Tuple[float, float]:
        q = stats.t.ppf(0.5 + level / 2, self.df)
        b, se = self.coefficient(term), self.standard_error(term)
        return float(b - q * se), float(b + q * se)

    @property
    def beta0(self) -> float:
        return self.coefficient(TREATMENT_TERM)

    def term_summary(self, term: str) -> Dict[str, float]:
        lo, hi = self.confidence_interval(term)
        return {
            "coefficient": self.coefficient(term),
            "standard_error": self.standard_error(term),
            "t": self.t_value(term),
            "p_value": self.p_value(term),
            "ci_low": lo,
            "ci_high": hi,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "terms": {t: self.term_summary(t) for t in self.terms},
            "rows_used": self.rows_used,
            "participants": self.participants,
            "df": self.df,
            "excluded": dict(sorted(self.excluded.items())),
        }

    def table(self) -> str:
        frame = pd.DataFrame(
            [self.term_summary(t) for t in self.terms], index=list(self.terms)
        )
        header = "{} ({} outcome): {} rows, {} participants".format(
            self.spec.component_id, self.spec.outcome_variant, self.rows_used, self.participants
        )
        lines = [header, frame.to_string(float_format=lambda x: "{:.4f}".format(x))]
        if self.excluded:
            lines.append(
                "excluded: "
                + ", ".join("{}={}".format(k, v) for k, v in sorted(self.excluded.items()))
            )
        return "\n".join(lines)


def _exclusion(row: AnalysisRow, field_name: str, fallback: str) -> str:
    found = codes_for(row.missingness_codes, field_name)
    return found[0] if found else fallback


def _outcome(row: AnalysisRow, spec: EffectSpec) -> Tuple[Optional[int], str]:
    if spec.outcome_variant == "phone_fit":
        return row.redundant_outcome, "redundant_outcome"
    return row.proximal_outcome, "proximal_outcome"


def _select(rows: Sequence[AnalysisRow], spec: EffectSpec) -> Tuple[List[AnalysisRow], Dict[str, int]]:
    used = []
    excluded: Dict[str, int] = {}

    def skip(why: str) -> None:
        excluded[why] = excluded.get(why, 0) + 1

    for r in rows:
        if r.component_id != spec.component_id:
            continue
        if r.travel_excluded:
            skip("TRAVEL_EXCLUDED")
            continue
        if r.treatment is None:
            skip(_exclusion(r, "treatment", "UNAVAILABLE"))
            continue
        value, name = _outcome(r, spec)
        if value is None:
            skip(_exclusion(r, name, "SENSOR_GAP_AMBIGUOUS"))
            continue
        missing = None
        for cov in spec.controls + spec.moderators:
            v = getattr(r, cov)
            if v is None or v == NO_RESPONSE:
                missing = _exclusion(r, cov, "NO_PRIOR")
                break
        if missing is not None:
            skip(missing)
            continue
        used.append(r)
    return used, excluded


def _expand(name: str, values: List[Any]) -> Tuple[List[str], np.ndarray]:
    """One column for numeric covariates, drop-first dummies for categorical ones."""
    if name in NUMERIC_COVARIATES:
        return [name], np.asarray(values, dtype=float).reshape(-1, 1)
    levels = sorted(set(values), key=str)
    names = ["{}[{}]".format(name, lvl) for lvl in levels[1:]]
    cols = np.column_stack([[1.0 if v == lvl else 0.0 for v in values] for lvl in levels[1:]]) if names else np.zeros((len(values), 0))
    return names, cols


def design_matrix(
    rows: Sequence[AnalysisRow], spec: EffectSpec
) -> Tuple[List[str], np.ndarray, np.ndarray, np.ndarray]:
    """(terms, X, y, cluster labels) for rows already selected."""
    n = len(rows)
    terms = ["intercept"]
    blocks = [np.ones((n, 1))]
    for c in spec.controls:
        names, cols = _expand(c, [getattr(r, c) for r in rows])
        terms.extend(names)
        blocks.append(cols)
    a = np.array([r.treatment - float(r.probability) for r in rows], dtype=float)  # type: ignore
    terms.append(TREATMENT_TERM)
    blocks.append(a.reshape(-1, 1))
    for m in spec.moderators:
        names, cols = _expand(m, [getattr(r, m) for r in rows])
        terms.extend("{}:{}".format(TREATMENT_TERM, nm) for nm in names)
        blocks.append(cols * a.reshape(-1, 1))
    X = np.hstack(blocks)
    y = np.array([_outcome(r, spec)[0] for r in rows], dtype=float)
    clusters = np.array([r.participant_id for r in rows])
    return terms, X, y, clusters


def fit(X: np.ndarray, y: np.ndarray, terms: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    """Least squares through pivoted QR; returns (beta, bread = (X'X)^-1)."""
    n, p = X.shape
    Q, R, P = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if p == 0 or diag[0] == 0:
        raise RankDeficiencyError(terms)
    rank = int(np.sum(diag > RANK_TOLERANCE * diag[0]))
    if rank < p:
        raise RankDeficiencyError([terms[i] for i in P[rank:]])
    beta = np.empty(p)
    beta[P] = linalg.solve_triangular(R, Q.T @ y)
    r_inv = linalg.solve_triangular(R, np.eye(p))
    bread = np.empty((p, p))
    bread[np.ix_(P, P)] = r_inv @ r_inv.T
    return beta, bread


def cluster_vcov(
    X: np.ndarray, residuals: np.ndarray, clusters: np.ndarray, bread: np.ndarray
) -> np.ndarray:
    n, p = X.shape
    codes, uniques = pd.factorize(clusters)
    G = len(uniques)
    scores = np.zeros((G, p))
    np.add.at(scores, codes, X * residuals[:, np.newaxis])
    meat = scores.T @ scores
    correction = (G / (G - 1)) * ((n - 1) / (n - p))
    return correction * bread @ meat @ bread


def estimate(rows: Sequence[AnalysisRow], spec: EffectSpec) -> EffectEstimate:
    used, excluded = _select(rows, spec)
    participants = len({r.participant_id for r in used})
    if participants < 2:
        raise ValidationError(
            "need rows from at least 2 participants, got {}".format(participants), "rows"
        )
    terms, X, y, clusters = design_matrix(used, spec)
    if spec.weights is not None:
        w = np.sqrt(np.array([spec.weights(r) for r in used], dtype=float))
        X, y = X * w[:, np.newaxis], y * w
    beta, bread = fit(X, y, terms)
    vcov = cluster_vcov(X, y - X @ beta, clusters, bread)
    se = np.sqrt(np.clip(np.diag(vcov), 0, None))
    logger.debug(
        "{}: beta0 {:.3f} (se {:.3f}) over {} rows".format(
            spec.component_id, beta[terms.index(TREATMENT_TERM)], se[terms.index(TREATMENT_TERM)], len(used)
        )
    )
    return EffectEstimate(
        spec=spec,
        terms=tuple(terms),
        coefficients=tuple(float(b) for b in beta),
        standard_errors=tuple(float(s) for s in se),
        rows_used=len(used),
        participants=participants,
        excluded=excluded,
    )


def moderation_report(
    rows: Sequence[AnalysisRow], spec: EffectSpec, moderators: Sequence[str] = ("day_index",)
) -> Dict[str, Dict[str, float]]:
    """Main effect and every treatment-by-moderator term, time on study included by default."""
    est = estimate(rows, spec.with_moderators(*moderators))
    return {t: est.term_summary(t) for t in est.terms if t.startswith(TREATMENT_TERM)}


@dataclass(frozen=True)
class SensitivityReport:
    zero: EffectEstimate
    redundant: EffectEstimate
    deltas: Dict[str, float]
    differing_rows: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "zero": self.zero.to_dict(),
            "redundant": self.redundant.to_dict(),
            "deltas": self.deltas,
            "differing_rows": self.differing_rows,
        }


def sensitivity_compare(
    rows_zero: Sequence[AnalysisRow], rows_redundant: Sequence[AnalysisRow], spec: EffectSpec
) -> SensitivityReport:
    zero = estimate(rows_zero, replace(spec, outcome_variant="zero"))
    redundant = estimate(rows_redundant, replace(spec, outcome_variant="redundant"))
    by_key = {r.key: r for r in rows_redundant if r.component_id == spec.component_id}
    differing = 0
    for r in rows_zero:
        if r.component_id != spec.component_id:
            continue
        other = by_key.get(r.key)
        if other is None or (r.proximal_outcome, r.outcome_source) != (
            other.proximal_outcome,
            other.outcome_source,
        ):
            differing += 1
    deltas = {
        t: redundant.coefficient(t) - zero.coefficient(t)
        for t in zero.terms
        if t in redundant.terms
    }
    return SensitivityReport(zero, redundant, deltas, differing)


@dataclass(frozen=True)
class ReplicationSummary:
    term: str
    seeds: Tuple[int, ...]
    estimates: Tuple[float, ...]
    p_values: Tuple[float, ...]
    alpha: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.estimates))

    @property
    def mc_se(self) -> float:
        return float(np.std(self.estimates, ddof=1) / math.sqrt(len(self.estimates)))

    @property
    def rejections(self) -> int:
        return int(sum(p < self.alpha for p in self.p_values))

    @property
    def rejection_rate(self) -> float:
        return self.rejections / len(self.p_values)

    def covers(self, truth: float, k: float = 2.0) -> bool:
        return abs(self.mean - truth) <= k * self.mc_se

    def to_dict(self) -> Dict[str, Any]:
        return {
            "term": self.term,
            "replications": len(self.seeds),
            "mean": self.mean,
            "mc_se": self.mc_se,
            "rejection_rate": self.rejection_rate,
            "alpha": self.alpha,
        }


def _replicate_one(args) -> Tuple[float, float]:
    # top level so worker processes can unpickle it
    scenario, spec, term, seed = args
    from .pipeline import build_variant
    from .sim import run

    log, _ = run(scenario.with_seed(seed))
    variant = "redundant" if spec.outcome_variant == "redundant" else "zero"
    est = estimate(build_variant(log, variant), spec)
    return est.coefficient(term), est.p_value(term)


def replicate(
    scenario,
    spec: EffectSpec,
    seeds: Sequence[int],
    term: str = TREATMENT_TERM,
    workers: int = 1,
    alpha: float = 0.05,
) -> ReplicationSummary:
    """Simulate, build rows and estimate once per seed; seeds may run in a process pool."""
    jobs = [(scenario, spec, term, s) for s in seeds]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_one, jobs))
    else:
        results = [_replicate_one(j) for j in jobs]
    summary = ReplicationSummary(
        term=term,
        seeds=tuple(seeds),
        estimates=tuple(r[0] for r in results),
        p_values=tuple(r[1] for r in results),
        alpha=alpha,
    )
    logger.info(
        "{} replications of {}: mean {:.3f}, MC se {:.3f}, rejection rate {:.3f}".format(
            len(seeds), term, summary.mean, summary.mc_se, summary.rejection_rate
        )
    )
    return summary
