"""Model comparison by tail-metric cross-validation and model-space search.

A model is a binary string over a list of candidate terms.  Its score is the
10-fold cross-validated smooth gamma: coefficients are fitted on nine folds
(transforms, covariance and threshold from those folds only) and gamma is
evaluated on the held-out fold with the same coefficients in both the weights
and the ratio.  Lower is better.

The search is simulated annealing over strings with one-bit-flip proposals
that are resampled until they respect the forced bits, the correlation cap and
the size limits, and a logarithmic cooling schedule.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import special

from .data import Sample, Term
from .errors import SearchError, TailComboError, EstimationError
from .lincomb import combine_and_transform
from .marginals import EmpiricalMarginal, empirical_cdf
from .optimize import FitSettings, fit, prepare
from .parallel import pmap
from .rng import derive_seed, make_rng
from .taildep import gamma_hat

__all__ = [
    "CVResult",
    "cv_score",
    "ModelString",
    "ModelSpace",
    "CoolingSchedule",
    "SearchRecord",
    "neighbor",
    "temperature",
    "accept_move",
    "anneal",
    "run_chains",
    "exhaustive_search",
    "read_checkpoint",
]


# -- cross-validation -----------------------------------------------------------


@dataclass(frozen=True)
class CVResult:
    score: float
    fold_scores: tuple
    failed_folds: tuple = ()
    warning: bool = False

    def as_dict(self) -> dict:
        return {
            "cv": float(self.score),
            "fold_scores": [None if not np.isfinite(v) else float(v) for v in self.fold_scores],
            "failed_folds": list(self.failed_folds),
            "warning": bool(self.warning),
        }


def fold_partition(n: int, folds: int, seed) -> list:
    perm = make_rng(seed, 0xC5).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _fold_score(args):
    sample, terms, settings, train_idx, test_idx, fit_seed = args
    train = sample.take(train_idx)
    test = sample.take(test_idx)
    design, response_tf, obj = prepare(train, terms, settings)
    res = fit(obj, replace(settings.optimizer, seed=fit_seed))
    test_design = design.apply(test)
    x = combine_and_transform(test_design, res.theta_hat)
    y = response_tf.apply(test.response)
    return gamma_hat(x, y, obj.thr, mode="smooth")


def cv_score(sample: Sample, terms, settings: FitSettings = FitSettings(), folds: int = 10,
             seed: int = 0, workers: int = 1) -> CVResult:
    """Mean held-out smooth gamma over a seeded random partition.

    A fold whose held-out points all get zero weight is dropped with a
    warning flag if it is the only one; more failures raise.
    """
    terms = list(terms)
    if sample.n < 20 * folds:
        raise EstimationError(f"cross-validation needs n >= {20 * folds}, got {sample.n}")
    parts = fold_partition(sample.n, folds, seed)
    all_idx = np.arange(sample.n)
    jobs = []
    for p, test_idx in enumerate(parts):
        train_idx = np.setdiff1d(all_idx, test_idx, assume_unique=True)
        jobs.append((sample, terms, settings, train_idx, test_idx, derive_seed(seed, p)))
    results = pmap(_safe_fold, jobs, workers)
    scores, failed = [], []
    for p, r in enumerate(results):
        if isinstance(r, EstimationError):
            failed.append(p)
            scores.append(float("nan"))
        elif isinstance(r, Exception):
            raise r
        else:
            scores.append(r)
    if len(failed) > 1:
        raise EstimationError(f"{len(failed)} folds had no effective held-out exceedances")
    good = [s for s in scores if np.isfinite(s)]
    return CVResult(float(np.mean(good)), tuple(scores), tuple(failed), bool(failed))


def _safe_fold(args):
    try:
        return _fold_score(args)
    except EstimationError as exc:
        return exc


# -- model strings ----------------------------------------------------------------


@dataclass(frozen=True)
class ModelString:
    bits: tuple
    forced: frozenset = frozenset()

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("model bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "forced", frozenset(int(i) for i in self.forced))

    @classmethod
    def from_string(cls, text: str, forced=()) -> "ModelString":
        return cls(tuple(int(c) for c in text.strip()), frozenset(forced))

    @classmethod
    def from_indices(cls, r: int, selected, forced=()) -> "ModelString":
        bits = [0] * r
        for i in set(selected) | set(forced):
            bits[i] = 1
        return cls(tuple(bits), frozenset(forced))

    def __str__(self):
        return "".join(str(b) for b in self.bits)

    @property
    def selected(self) -> tuple:
        return tuple(i for i, b in enumerate(self.bits) if b)

    @property
    def size(self) -> int:
        return sum(self.bits)

    def flip(self, i: int) -> "ModelString":
        bits = list(self.bits)
        bits[i] ^= 1
        return replace(self, bits=tuple(bits))


def _term_column(term: Term, scores: dict, sample: Sample, precip_threshold: float):
    if term.kind == "main":
        return scores[term.a]
    if term.kind == "square":
        return scores[term.a] ** 2
    if term.kind == "inter":
        return scores[term.a] * scores[term.b]
    indicator = (sample.column(term.a if term.kind == "indicator" else term.b) > precip_threshold)
    if term.kind == "indicator":
        return indicator.astype(float)
    return indicator * scores[term.a]


@dataclass(frozen=True)
class ModelSpace:
    """Candidate terms plus the constraints every searched model must meet."""

    candidates: tuple
    corr: np.ndarray
    corr_cap: float = 0.9
    max_size: int | None = None
    min_size: int = 1

    @classmethod
    def from_sample(cls, sample: Sample, candidates, corr_cap=0.9, max_size=None, min_size=1,
                    precip_threshold=0.01) -> "ModelSpace":
        candidates = tuple(candidates)
        needed = sorted({f for t in candidates for f in t.factors
                         if t.kind not in ("indicator",) and not (t.kind == "precip" and f == t.b)})
        scores = {}
        for name in needed:
            marginal = EmpiricalMarginal.from_data(sample.column(name))
            scores[name] = special.ndtri(empirical_cdf(marginal, sample.column(name)))
        cols = np.column_stack([_term_column(t, scores, sample, precip_threshold) for t in candidates])
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.atleast_2d(np.corrcoef(cols, rowvar=False))
        corr = np.nan_to_num(corr, nan=0.0)
        return cls(candidates, np.abs(corr), corr_cap, max_size, min_size)

    @property
    def r(self) -> int:
        return len(self.candidates)

    def terms(self, model: ModelString) -> list:
        return [self.candidates[i] for i in model.selected]

    def violation(self, model: ModelString) -> str | None:
        if len(model.bits) != self.r:
            return f"string length {len(model.bits)} != {self.r} candidates"
        sel = model.selected
        if any(model.bits[i] == 0 for i in model.forced):
            return "forced term missing"
        if len(sel) < self.min_size:
            return "too few terms"
        if self.max_size is not None and len(sel) > self.max_size:
            return "too many terms"
        terms = [self.candidates[i] for i in sel]
        if not any(t.is_continuous for t in terms):
            return "no continuous term"
        has_ind = any(t.kind == "indicator" for t in terms)
        if any(t.kind == "precip" for t in terms) and not has_ind:
            return "precipitation interaction without indicator"
        if len(sel) > 1:
            sub = self.corr[np.ix_(sel, sel)]
            np.fill_diagonal(sub, 0.0)
            if sub.max() > self.corr_cap:
                i, j = np.unravel_index(np.argmax(sub), sub.shape)
                return f"{terms[i]} and {terms[j]} too correlated"
        return None

    def is_valid(self, model: ModelString) -> bool:
        return self.violation(model) is None

    def random_model(self, rng, size: int, forced=()) -> ModelString:
        """A valid random string with ``size`` free terms on top of the forced ones."""
        free = [i for i in range(self.r) if i not in set(forced)]
        for _ in range(1000):
            pick = rng.choice(len(free), size=min(size, len(free)), replace=False)
            model = ModelString.from_indices(self.r, [free[i] for i in pick], forced)
            if self.is_valid(model):
                return model
        raise SearchError("could not draw a valid random starting model")


def neighbor(model: ModelString, space: ModelSpace, rng, max_attempts: int = 100) -> ModelString:
    """Flip one uniformly chosen non-forced bit, resampling invalid results."""
    free = [i for i in range(len(model.bits)) if i not in model.forced]
    if not free:
        raise SearchError("every bit is forced; the model has no neighbours")
    for _ in range(max_attempts):
        cand = model.flip(free[int(rng.integers(len(free)))])
        if space.is_valid(cand):
            return cand
    raise SearchError(f"no valid neighbour of {model} in {max_attempts} attempts")


# -- annealing --------------------------------------------------------------------


@dataclass(frozen=True)
class CoolingSchedule:
    temp0: float = 0.01
    moves_per_temp: int = 10

    def __post_init__(self):
        if not self.temp0 > 0:
            raise ValueError("temp0 must be positive")
        if self.moves_per_temp < 1:
            raise ValueError("moves_per_temp must be at least 1")


def temperature(schedule: CoolingSchedule, j: int) -> float:
    """Temperature at iteration ``j`` (1-based), logarithmic in blocks of moves."""
    m = schedule.moves_per_temp
    return schedule.temp0 / math.log(((j - 1) // m) * m + math.e)


def accept_move(delta: float, temp: float, u: float) -> bool:
    """Accept improvements always, others with probability ``exp(-delta / temp)``."""
    if delta < 0:
        return True
    return u < math.exp(-delta / temp)


@dataclass
class SearchRecord:
    visited: dict = field(default_factory=dict)
    chain_trace: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    top_m: int = 20

    @property
    def best_list(self) -> list:
        ranked = sorted(self.visited.items(), key=lambda kv: (kv[1], kv[0]))
        return ranked[: self.top_m]

    def merge(self, other: "SearchRecord") -> "SearchRecord":
        visited = dict(self.visited)
        visited.update(other.visited)
        return SearchRecord(
            visited=visited,
            chain_trace=self.chain_trace + other.chain_trace,
            failures={**self.failures, **other.failures},
            top_m=self.top_m,
        )


class CVScorer:
    """Memoized CV score of model strings (same folds and seeds for all)."""

    def __init__(self, sample, space, settings, folds=10, seed=0, memo=None):
        self.sample = sample
        self.space = space
        self.settings = settings
        self.folds = folds
        self.seed = seed
        self.memo = {} if memo is None else memo
        self.failures = {}
        self.evaluations = 0

    def __call__(self, model: ModelString) -> float:
        key = str(model)
        if key in self.memo:
            return self.memo[key]
        if key in self.failures:
            raise SearchError(self.failures[key])
        self.evaluations += 1
        try:
            value = cv_score(self.sample, self.space.terms(model), self.settings, self.folds, self.seed).score
        except TailComboError as exc:
            self.failures[key] = f"{type(exc).__name__}: {exc}"
            raise SearchError(self.failures[key]) from exc
        self.memo[key] = value
        return value


def anneal(scorer: CVScorer, init: ModelString, schedule: CoolingSchedule = CoolingSchedule(),
           budget: int = 100, seed: int = 0, chain: int = 0, start: tuple | None = None,
           checkpoint=None, top_m: int = 20) -> SearchRecord:
    """Simulated annealing over model strings.

    ``start=(iteration, model, cv)`` resumes a chain from a checkpointed
    state; proposals at iteration ``j`` draw from the stream ``(seed, chain,
    j)``, so a resumed run continues exactly as an uninterrupted one would.
    ``checkpoint`` is an open text file receiving one JSON line per iteration.
    """
    space = scorer.space
    if not space.is_valid(init):
        raise SearchError(f"initial model invalid: {space.violation(init)}")
    if start is None:
        j0, state = 0, init
        cv_state = scorer(state)
    else:
        j0, state, cv_state = start
        scorer.memo.setdefault(str(state), cv_state)
    record = SearchRecord(top_m=top_m)
    record.visited[str(state)] = cv_state
    if start is None:
        entry = {"chain": chain, "iteration": 0, "bits": str(state), "cv": cv_state, "temperature": None,
                 "proposal": None, "proposal_cv": None}
        record.chain_trace.append(entry)
        if checkpoint is not None:
            checkpoint.write(json.dumps(entry) + "\n")
    for j in range(j0 + 1, budget + 1):
        rng = make_rng(seed, chain, j)
        temp = temperature(schedule, j)
        cand = neighbor(state, space, rng)
        u = rng.random()
        try:
            cv_cand = scorer(cand)
        except SearchError:
            cv_cand = None
        if cv_cand is not None:
            record.visited[str(cand)] = cv_cand
            if accept_move(cv_cand - cv_state, temp, u):
                state, cv_state = cand, cv_cand
        entry = {"chain": chain, "iteration": j, "bits": str(state), "cv": cv_state, "temperature": temp,
                 "proposal": str(cand), "proposal_cv": cv_cand}
        record.chain_trace.append(entry)
        if checkpoint is not None:
            checkpoint.write(json.dumps(entry) + "\n")
            checkpoint.flush()
    record.failures.update(scorer.failures)
    return record


def read_checkpoint(path) -> dict:
    """Last recorded state of each chain: ``{chain: (iteration, bits, cv)}``."""
    last = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            e = json.loads(line)
            last[int(e["chain"])] = (int(e["iteration"]), e["bits"], float(e["cv"]))
    return last


def _run_chain(args):
    (sample, space, settings, folds, cv_seed, init, schedule, budget, seed, chain, start,
     memo, top_m) = args
    scorer = CVScorer(sample, space, settings, folds, cv_seed, memo=dict(memo))
    return anneal(scorer, init, schedule, budget, seed, chain, start, None, top_m)


def run_chains(sample: Sample, space: ModelSpace, inits, settings: FitSettings = FitSettings(),
               schedule: CoolingSchedule = CoolingSchedule(), budget: int = 100, seed: int = 0,
               folds: int = 10, cv_seed: int = 0, workers: int = 1, checkpoint_path=None,
               resume: bool = False, memo: dict | None = None, top_m: int = 20) -> SearchRecord:
    """Independent annealing chains, merged into one record.

    With one worker the chains run in turn and share a memo table; the CV
    score of a string is deterministic, so sharing never changes results.
    """
    memo = {} if memo is None else memo
    starts = {}
    if resume and checkpoint_path is not None and Path(checkpoint_path).exists():
        for c, (j, bits, cv) in read_checkpoint(checkpoint_path).items():
            forced = inits[c].forced
            starts[c] = (j, ModelString.from_string(bits, forced), cv)
    prior = []
    if resume and checkpoint_path is not None and Path(checkpoint_path).exists():
        with open(checkpoint_path) as fh:
            prior = [json.loads(line) for line in fh if line.strip()]
        # every string scored before the interruption, so the merged record
        # matches an uninterrupted run
        for e in prior:
            memo.setdefault(e["bits"], e["cv"])
            if e.get("proposal_cv") is not None:
                memo.setdefault(e["proposal"], e["proposal_cv"])

    records = []
    if workers <= 1:
        fh = open(checkpoint_path, "a" if resume else "w") if checkpoint_path else None
        try:
            for c, init in enumerate(inits):
                scorer = CVScorer(sample, space, settings, folds, cv_seed, memo=memo)
                records.append(anneal(scorer, init, schedule, budget, seed, c, starts.get(c), fh, top_m))
        finally:
            if fh is not None:
                fh.close()
    else:
        jobs = [
            (sample, space, settings, folds, cv_seed, init, schedule, budget, seed, c,
             starts.get(c), memo, top_m)
            for c, init in enumerate(inits)
        ]
        records = pmap(_run_chain, jobs, workers)
        if checkpoint_path is not None:
            with open(checkpoint_path, "a" if resume else "w") as fh:
                for rec in records:
                    for entry in rec.chain_trace:
                        fh.write(json.dumps(entry) + "\n")
    out = SearchRecord(top_m=top_m)
    for rec in records:
        out = out.merge(rec)
    for key, value in memo.items():
        out.visited.setdefault(key, value)
    out.chain_trace = sorted(prior + out.chain_trace, key=lambda e: (e["chain"], e["iteration"]))
    return out


# -- exhaustive enumeration -------------------------------------------------------


def enumerate_models(space: ModelSpace, max_vars: int, forced=(), cap: int = 100_000):
    forced = sorted(set(forced))
    free = [i for i in range(space.r) if i not in forced]
    total = sum(math.comb(len(free), i) for i in range(0, max_vars + 1))
    models = []
    for size in range(0, max_vars + 1):
        for combo in itertools.combinations(free, size):
            model = ModelString.from_indices(space.r, combo, forced)
            if model.size == 0 or not space.is_valid(model):
                continue
            models.append(model)
            if len(models) > cap:
                raise SearchError(
                    f"enumeration exceeds the cap of {cap} models (up to {total} before filtering)"
                )
    return models


def _score_model(args):
    sample, terms, settings, folds, seed = args
    try:
        return cv_score(sample, terms, settings, folds, seed).score
    except TailComboError:
        return float("nan")


def exhaustive_search(sample: Sample, space: ModelSpace, max_vars: int, forced=(),
                      settings: FitSettings = FitSettings(), folds: int = 10, seed: int = 0,
                      workers: int = 1, cap: int = 100_000) -> list:
    """CV-score every valid model with up to ``max_vars`` free terms.

    Returns ``(ModelString, cv)`` pairs in ascending CV order; models whose
    score failed are dropped with a warning.
    """
    models = enumerate_models(space, max_vars, forced, cap)
    jobs = [(sample, space.terms(m), settings, folds, seed) for m in models]
    scores = pmap(_score_model, jobs, workers)
    ranked = [(m, s) for m, s in zip(models, scores) if np.isfinite(s)]
    if len(ranked) < len(models):
        warnings.warn(f"{len(models) - len(ranked)} models failed to score", RuntimeWarning)
    ranked.sort(key=lambda ms: (ms[1], str(ms[0])))
    return ranked
