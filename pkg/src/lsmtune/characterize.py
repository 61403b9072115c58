"""Distribution fitting and similarity statistics.

Size distributions are fitted in the value domain against the empirical
CDF; key-popularity distributions (Zipfian, two-term exponential) are
fitted in rank-frequency space. The best candidate is chosen by R², with
ties going to the family with fewer parameters. A two-sample KS test
quantifies observed-vs-synthesized similarity.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import (
    FitFailure,
    LengthMismatch,
    TooFewSamples,
    UnparseableSuggestion,
)
from .trace import TimeWindowSummary, TraceStats

log = logging.getLogger(__name__)

FIXED = "Fixed"
UNIFORM = "Uniform"
ZIPFIAN = "Zipfian"
PARETO = "Pareto"
EXPONENTIAL = "Exponential"
TWO_TERM_EXPONENTIAL = "TwoTermExponential"
NORMAL = "Normal"
EMPIRICAL = "Empirical"

FAMILY_PARAMS: dict[str, tuple[str, ...]] = {
    FIXED: ("value",),
    UNIFORM: ("low", "high"),
    NORMAL: ("mu", "sigma"),
    EXPONENTIAL: ("rate",),
    PARETO: ("shape", "scale"),
    ZIPFIAN: ("s", "n"),
    TWO_TERM_EXPONENTIAL: ("a", "b", "c", "d"),
    EMPIRICAL: (),  # open-ended v{i}/w{i} pairs
}

# families fitted on descending rank-frequency rather than raw values
POPULARITY_FAMILIES = (ZIPFIAN, TWO_TERM_EXPONENTIAL)

DEFAULT_CANDIDATES = (FIXED, UNIFORM, NORMAL, EXPONENTIAL, PARETO,
                      ZIPFIAN, TWO_TERM_EXPONENTIAL)

# advisor refinement trigger; best R² below this means the local fit failed
REFINE_R2_THRESHOLD = 0.90

# size distributions are never popularity curves, so sizes skip those tags
SIZE_CANDIDATES = (FIXED, UNIFORM, NORMAL, EXPONENTIAL, PARETO)

EMPIRICAL_SUPPORT_CAP = 512
_ZIPF_N_CAP = 2_000_000
_MIN_SAMPLES = 10


@dataclass(frozen=True)
class DistributionFamily:
    tag: str
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        violations = validate_family(self.tag, self.params)
        if violations:
            raise ValueError("; ".join(violations))


def validate_family(tag: str, params: dict[str, float]) -> list[str]:
    """Invariant checks; returns human-readable violations."""
    out: list[str] = []
    if tag not in FAMILY_PARAMS:
        return [f"unknown family tag {tag!r}"]
    if tag == EMPIRICAL:
        n_pairs = sum(1 for k in params if k.startswith("v"))
        for i in range(n_pairs):
            if f"v{i}" not in params or f"w{i}" not in params:
                out.append(f"empirical pair {i} incomplete")
        if not n_pairs:
            out.append("empirical family has no support points")
        return out
    for name in FAMILY_PARAMS[tag]:
        if name not in params:
            out.append(f"{tag} missing parameter {name!r}")
    for name in ("scale", "sigma", "n"):
        if name in FAMILY_PARAMS[tag] and name in params and params[name] <= 0:
            out.append(f"{tag} parameter {name!r} must be > 0")
    if tag == UNIFORM and "low" in params and "high" in params \
            and params["high"] < params["low"]:
        out.append("Uniform requires high >= low")
    return out


@dataclass(frozen=True)
class DistributionFit:
    family: DistributionFamily
    r_squared: float
    sample_count: int


@dataclass
class WorkloadCharacterization:
    key_size: DistributionFit
    value_size: DistributionFit
    key_access: DistributionFit
    query_ratios: dict[str, float]
    periodic_hint: Optional[dict] = None
    source_windows: list[TimeWindowSummary] = field(default_factory=list)


@dataclass(frozen=True)
class SimilarityReport:
    ks_statistic: float
    p_value: float
    sample_sizes: tuple[int, int]


def empirical_from_counts(counts: dict[float, float],
                          cap: int = EMPIRICAL_SUPPORT_CAP,
                          ) -> DistributionFamily:
    """Build an Empirical family from value→weight pairs (heaviest kept)."""
    items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    items.sort(key=lambda kv: kv[0])
    params: dict[str, float] = {}
    for i, (v, w) in enumerate(items):
        params[f"v{i}"] = float(v)
        params[f"w{i}"] = float(w)
    return DistributionFamily(EMPIRICAL, params)


def empirical_support(fam: DistributionFamily) -> list[tuple[float, float]]:
    pairs = []
    i = 0
    while f"v{i}" in fam.params:
        pairs.append((fam.params[f"v{i}"], fam.params[f"w{i}"]))
        i += 1
    return pairs


# ---------------------------------------------------------------------------
# goodness of fit


def r_squared(observed: Sequence[float], predicted: Sequence[float]) -> float:
    """Coefficient of determination, 1 - SS_res/SS_tot.

    Degenerate cases follow the sentinel convention: when the observations
    have zero variance, a perfect prediction scores 1.0 and anything else
    scores -inf.
    """
    if len(observed) != len(predicted):
        raise LengthMismatch(
            f"observed has {len(observed)} points, predicted {len(predicted)}")
    if not observed:
        raise LengthMismatch("empty vectors")
    mean = sum(observed) / len(observed)
    ss_tot = sum((o - mean) ** 2 for o in observed)
    ss_res = sum((o - p) ** 2 for o, p in zip(observed, predicted))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else float("-inf")
    return 1.0 - ss_res / ss_tot


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> SimilarityReport:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    if len(a) < 20 or len(b) < 20:
        raise TooFewSamples(
            f"KS needs >= 20 points per sample, got {len(a)} and {len(b)}")
    xs = sorted(a)
    ys = sorted(b)
    n, m = len(xs), len(ys)
    i = j = 0
    d = 0.0
    while i < n and j < m:
        # consume every copy of the next distinct value from both sides so
        # tied observations never register a spurious gap
        v = xs[i] if xs[i] <= ys[j] else ys[j]
        while i < n and xs[i] == v:
            i += 1
        while j < m and ys[j] == v:
            j += 1
        gap = abs(i / n - j / m)
        if gap > d:
            d = gap
    if d == 0.0:
        return SimilarityReport(0.0, 1.0, (n, m))
    ne = n * m / (n + m)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    total = 0.0
    for k in range(1, 101):
        total += (-1) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
    p = max(0.0, min(1.0, 2.0 * total))
    return SimilarityReport(d, p, (n, m))


# ---------------------------------------------------------------------------
# per-family CDFs


def _norm_cdf(x: float, mu: float, sigma: float) -> float:
    return 0.5 * (1.0 + math.erf((x - mu) / (sigma * math.sqrt(2.0))))


def family_cdf(fam: DistributionFamily, xs: Sequence[float]) -> list[float]:
    """Value-domain CDF of a continuous/size family at each point."""
    t, p = fam.tag, fam.params
    if t == FIXED:
        v = p["value"]
        return [1.0 if x >= v else 0.0 for x in xs]
    if t == UNIFORM:
        lo, hi = p["low"], p["high"]
        if hi == lo:
            return [1.0 if x >= lo else 0.0 for x in xs]
        return [min(1.0, max(0.0, (x - lo) / (hi - lo))) for x in xs]
    if t == NORMAL:
        return [_norm_cdf(x, p["mu"], p["sigma"]) for x in xs]
    if t == EXPONENTIAL:
        r = p["rate"]
        return [1.0 - math.exp(-r * x) if x > 0 else 0.0 for x in xs]
    if t == PARETO:
        shape, scale = p["shape"], p["scale"]
        return [1.0 - (scale / x) ** shape if x >= scale else 0.0 for x in xs]
    if t == EMPIRICAL:
        pairs = empirical_support(fam)
        total = sum(w for _, w in pairs) or 1.0
        out = []
        for x in xs:
            out.append(sum(w for v, w in pairs if v <= x) / total)
        return out
    raise ValueError(f"{t} has no value-domain CDF")


def _tte_cdf_at(x: float, a: float, b: float, c: float, d: float) -> float:
    return a * math.exp(b * x) + c * math.exp(d * x)


def popularity_cdf(fam: DistributionFamily, ranks: Sequence[int],
                   n: int) -> list[float]:
    """Rank-domain CDF: probability mass on the top-k ranks, k in ranks."""
    t, p = fam.tag, fam.params
    if t == ZIPFIAN:
        s = p["s"]
        nn = min(int(p["n"]), _ZIPF_N_CAP)
        partial = _zipf_partial_sums(s, nn, max(ranks))
        total = partial[-1] if max(ranks) >= nn else _zipf_harmonic(s, nn)
        return [partial[min(k, nn) - 1] / total for k in ranks]
    if t == TWO_TERM_EXPONENTIAL:
        a, b, c, d = p["a"], p["b"], p["c"], p["d"]
        f0 = _tte_cdf_at(0.0, a, b, c, d)
        f1 = _tte_cdf_at(1.0, a, b, c, d)
        span = (f1 - f0) or 1.0
        return [(_tte_cdf_at(k / n, a, b, c, d) - f0) / span for k in ranks]
    if t == UNIFORM:
        return [min(1.0, k / n) for k in ranks]
    if t == EMPIRICAL:
        pairs = sorted(empirical_support(fam), key=lambda vw: -vw[1])
        total = sum(w for _, w in pairs) or 1.0
        cum = []
        acc = 0.0
        for _, w in pairs:
            acc += w
            cum.append(acc / total)
        return [cum[min(k, len(cum)) - 1] for k in ranks]
    raise ValueError(f"{t} has no rank-domain CDF")


_harmonic_cache: dict[tuple[float, int], float] = {}


def _zipf_harmonic(s: float, n: int) -> float:
    key = (s, n)
    if key not in _harmonic_cache:
        _harmonic_cache[key] = sum(k ** -s for k in range(1, n + 1))
    return _harmonic_cache[key]


def _zipf_partial_sums(s: float, n: int, upto: int) -> list[float]:
    upto = min(upto, n)
    out = []
    acc = 0.0
    for k in range(1, upto + 1):
        acc += k ** -s
        out.append(acc)
    return out


# ---------------------------------------------------------------------------
# per-family estimators


def _mode(values: Iterable[float]) -> float:
    counts = Counter(values)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def _fit_fixed(samples: Sequence[float]) -> DistributionFamily:
    return DistributionFamily(FIXED, {"value": _mode(samples)})


def _fit_uniform(samples: Sequence[float]) -> DistributionFamily:
    return DistributionFamily(UNIFORM, {"low": min(samples),
                                        "high": max(samples)})


def _fit_normal(samples: Sequence[float]) -> DistributionFamily:
    n = len(samples)
    mu = sum(samples) / n
    var = sum((x - mu) ** 2 for x in samples) / n
    return DistributionFamily(NORMAL, {"mu": mu,
                                       "sigma": max(math.sqrt(var), 1e-12)})


def _fit_exponential(samples: Sequence[float]) -> Optional[DistributionFamily]:
    if min(samples) < 0:
        return None
    mean = sum(samples) / len(samples)
    if mean <= 0:
        return None
    return DistributionFamily(EXPONENTIAL, {"rate": 1.0 / mean})


def _fit_pareto(samples: Sequence[float]) -> Optional[DistributionFamily]:
    xm = min(samples)
    if xm <= 0:
        return None
    acc = sum(math.log(x / xm) for x in samples)
    if acc <= 0:
        return None
    shape = min(len(samples) / acc, 1000.0)
    return DistributionFamily(PARETO, {"shape": shape, "scale": xm})


def _zipf_mle_s(ranks: Sequence[int], weights: Sequence[int],
                n: int) -> float:
    """Maximum-likelihood exponent for a bounded Zipf over {1..n}.

    The likelihood equation reduces to matching the expected log-rank, a
    quantity monotone in s, so bisection converges unconditionally.
    """
    lnj = np.log(np.arange(1, n + 1, dtype=np.float64))
    total = sum(weights)
    target = sum(w * math.log(k) for k, w in zip(ranks, weights)) / total

    def mean_log_rank(s: float) -> float:
        pw = np.exp(-s * lnj)
        return float((lnj * pw).sum() / pw.sum())

    lo, hi = 1e-3, 20.0
    if target >= mean_log_rank(lo):
        return lo
    if target <= mean_log_rank(hi):
        return hi
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if mean_log_rank(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _fit_zipf_from_series(series: Sequence[int], n: int,
                          ) -> Optional[DistributionFamily]:
    # descending counts: sort position stands in for the rank
    ranks = list(range(1, len(series) + 1))
    s = _zipf_mle_s(ranks, series, n)
    return DistributionFamily(ZIPFIAN, {"s": s, "n": float(n)})


def _fit_zipf_by_value(ranks: Sequence[int], weights: Sequence[int],
                       n: int) -> Optional[DistributionFamily]:
    # samples already carry rank identity; no frequency re-sorting needed
    s = _zipf_mle_s(ranks, weights, n)
    return DistributionFamily(ZIPFIAN, {"s": s, "n": float(n)})


_TTE_STARTS = (
    (1.2, 0.5, -1.2, -8.0),
    (1.0, 1.0, -1.0, -5.0),
    (0.6, 1.5, -0.6, -12.0),
    (2.0, 0.25, -2.0, -3.0),
    (0.9, 0.8, -0.9, -20.0),
    (1.5, 0.4, -1.5, -6.0),
    (0.8, 1.2, -0.8, -2.0),
    (1.1, 0.1, -1.1, -30.0),
)


def _fit_tte(xs: Sequence[float], cdf: Sequence[float],
             ) -> Optional[DistributionFamily]:
    """Nonlinear least squares with multi-start; non-convex objective."""

    def residuals(theta):
        a, b, c, d = theta
        return [a * math.exp(b * x) + c * math.exp(d * x) - y
                for x, y in zip(xs, cdf)]

    best = None
    best_sse = math.inf
    for start in _TTE_STARTS:
        try:
            res = least_squares(residuals, start, method="lm", max_nfev=4000)
        except Exception:
            continue
        sse = float(sum(r * r for r in res.fun))
        if math.isfinite(sse) and sse < best_sse:
            best_sse = sse
            best = [float(v) for v in res.x]
    if best is None:
        return None
    a, b, c, d = best
    if d > b:  # canonical order: leading term has the larger exponent
        a, b, c, d = c, d, a, b
    return DistributionFamily(TWO_TERM_EXPONENTIAL,
                              {"a": a, "b": b, "c": c, "d": d})


def _n_params(fam: DistributionFamily) -> int:
    if fam.tag == EMPIRICAL:
        return len(fam.params)
    return len(FAMILY_PARAMS[fam.tag])


def _weighted_r2(observed: Sequence[float], predicted: Sequence[float],
                 weights: Sequence[int]) -> float:
    """R² with per-point multiplicities; equals r_squared on the expanded
    vectors (each point repeated weight times)."""
    total = sum(weights)
    mean = sum(o * w for o, w in zip(observed, weights)) / total
    ss_tot = sum(w * (o - mean) ** 2 for o, w in zip(observed, weights))
    ss_res = sum(w * (o - p) ** 2
                 for o, p, w in zip(observed, predicted, weights))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else float("-inf")
    return 1.0 - ss_res / ss_tot


def fit_candidates(samples: Sequence[float],
                   candidates: Sequence[str] = DEFAULT_CANDIDATES,
                   ) -> DistributionFit:
    """Fit every candidate family and return the best by R².

    R² is taken against the empirical CDF evaluated at every sample (ties
    weight their point by multiplicity). Continuous families predict the
    value-domain CDF. Popularity families apply when samples are positive
    integers with repeats: the value is the rank, and the family predicts
    the top-k mass CDF. Ties break toward fewer parameters, then candidate
    order.
    """
    if len(samples) < _MIN_SAMPLES:
        raise TooFewSamples(
            f"need >= {_MIN_SAMPLES} samples, got {len(samples)}")
    if not candidates:
        raise FitFailure("no candidate families supplied")

    counts = Counter(samples)
    xs = sorted(counts)
    weights = [counts[x] for x in xs]
    total = len(samples)
    value_cdf = []
    acc = 0
    for w in weights:
        acc += w
        value_cdf.append(acc / total)

    rank_like = (len(xs) >= 3 and len(xs) < total
                 and all(float(x).is_integer() and x >= 1 for x in xs))
    if rank_like:
        ranks = [int(x) for x in xs]
        n_hat = ranks[-1]

    scored: list[tuple[float, DistributionFamily]] = []
    for tag in candidates:
        fam: Optional[DistributionFamily] = None
        try:
            if tag in POPULARITY_FAMILIES:
                if not rank_like:
                    continue
                if tag == ZIPFIAN:
                    fam = _fit_zipf_by_value(ranks, weights, n_hat)
                else:
                    fam = _fit_tte([k / n_hat for k in ranks], value_cdf)
                if fam is None:
                    continue
                predicted = popularity_cdf(fam, ranks, n_hat)
            else:
                if tag == FIXED:
                    fam = _fit_fixed(samples)
                elif tag == UNIFORM:
                    fam = _fit_uniform(samples)
                elif tag == NORMAL:
                    fam = _fit_normal(samples)
                elif tag == EXPONENTIAL:
                    fam = _fit_exponential(samples)
                elif tag == PARETO:
                    fam = _fit_pareto(samples)
                elif tag == EMPIRICAL:
                    fam = empirical_from_counts(dict(counts))
                else:
                    raise FitFailure(f"unknown candidate {tag!r}")
                if fam is None:
                    continue
                predicted = family_cdf(fam, xs)
            r2 = _weighted_r2(value_cdf, predicted, weights)
        except (ValueError, OverflowError, ZeroDivisionError):
            continue
        scored.append((r2, fam))

    if not scored:
        raise FitFailure("every candidate family failed to fit")

    best_r2, best_fam = scored[0]
    for r2, fam in scored[1:]:
        if r2 > best_r2 or (r2 == best_r2
                            and _n_params(fam) < _n_params(best_fam)):
            best_r2, best_fam = r2, fam
    return DistributionFit(best_fam, best_r2, len(samples))


def fit_popularity_counts(counts: Sequence[int],
                          candidates: Sequence[str] = (
                              UNIFORM, ZIPFIAN, TWO_TERM_EXPONENTIAL),
                          ) -> DistributionFit:
    """Fit access-popularity families to descending per-key counts."""
    series = sorted((int(c) for c in counts), reverse=True)
    if len(series) < 3:
        raise TooFewSamples("need >= 3 distinct keys to fit popularity")
    n = len(series)
    total = sum(series)
    ranks = list(range(1, n + 1))
    cdf = []
    acc = 0
    for c in series:
        acc += c
        cdf.append(acc / total)

    scored: list[tuple[float, DistributionFamily]] = []
    for tag in candidates:
        fam: Optional[DistributionFamily] = None
        if tag == ZIPFIAN:
            fam = _fit_zipf_from_series(series, n)
        elif tag == TWO_TERM_EXPONENTIAL:
            fam = _fit_tte([k / n for k in ranks], cdf)
        elif tag == UNIFORM:
            fam = DistributionFamily(UNIFORM, {"low": 1.0, "high": float(n)})
        elif tag == EMPIRICAL:
            fam = empirical_from_counts(
                {float(i + 1): c for i, c in enumerate(series)})
        if fam is None:
            continue
        try:
            predicted = popularity_cdf(fam, ranks, n)
            r2 = _weighted_r2(cdf, predicted, series)
        except (ValueError, OverflowError):
            continue
        scored.append((r2, fam))
    if not scored:
        raise FitFailure("no popularity family could be fitted")
    best_r2, best_fam = scored[0]
    for r2, fam in scored[1:]:
        if r2 > best_r2 or (r2 == best_r2
                            and _n_params(fam) < _n_params(best_fam)):
            best_r2, best_fam = r2, fam
    return DistributionFit(best_fam, best_r2, total)


# ---------------------------------------------------------------------------
# whole-workload characterization


def expand_histogram(hist: dict[int, int], cap: int = 100_000) -> list[float]:
    """Deterministically expand size→count into samples, downscaled to cap."""
    total = sum(hist.values())
    if total == 0:
        return []
    scale = max(1, -(-total // cap))  # ceil division
    out: list[float] = []
    for size in sorted(hist):
        n = hist[size] // scale
        if hist[size] and n == 0:
            n = 1
        out.extend([float(size)] * n)
    return out


def characterize(stats: TraceStats,
                 windows: Sequence[TimeWindowSummary],
                 ) -> WorkloadCharacterization:
    """Fit sizes and access popularity; copy the op mix verbatim."""
    key_samples = expand_histogram(stats.key_size_histogram)
    if len(key_samples) < _MIN_SAMPLES:
        key_samples = key_samples * _MIN_SAMPLES
    key_fit = fit_candidates(key_samples, SIZE_CANDIDATES)

    value_samples = expand_histogram(stats.value_size_histogram)
    if value_samples:
        if len(value_samples) < _MIN_SAMPLES:
            value_samples = value_samples * _MIN_SAMPLES
        value_fit = fit_candidates(value_samples, SIZE_CANDIDATES)
    else:
        # read-only trace: no payloads observed
        value_fit = DistributionFit(
            DistributionFamily(FIXED, {"value": 0.0}), 1.0, 0)

    access_counts = list(stats.per_key_access_counts.values())
    if len(access_counts) >= 3:
        access_fit = fit_popularity_counts(access_counts)
    else:
        access_fit = DistributionFit(
            DistributionFamily(UNIFORM,
                               {"low": 1.0,
                                "high": float(max(len(access_counts), 1))}),
            1.0, sum(access_counts))

    return WorkloadCharacterization(
        key_size=key_fit,
        value_size=value_fit,
        key_access=access_fit,
        query_ratios=dict(stats.op_ratios),
        periodic_hint=None,
        source_windows=list(windows),
    )


# ---------------------------------------------------------------------------
# advisor refinement


class SuggestionAdvisor(Protocol):
    def complete(self, text: str, meta: dict) -> str: ...


@dataclass
class Refinement:
    family_tag: Optional[str]
    params: Optional[dict[str, float]]
    periodic_hint: Optional[dict]
    raw_text: str


_FAMILY_WORDS = {
    "fixed": FIXED, "uniform": UNIFORM, "normal": NORMAL,
    "gaussian": NORMAL, "exponential": EXPONENTIAL, "pareto": PARETO,
    "zipfian": ZIPFIAN, "zipf": ZIPFIAN,
    "twotermexponential": TWO_TERM_EXPONENTIAL,
    "two-term-exponential": TWO_TERM_EXPONENTIAL,
    "empirical": EMPIRICAL,
}

_KV_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)")
_PERIOD_RE = re.compile(r"period(?:_s)?\s*=?\s*(\d+(?:\.\d+)?)\s*s?", re.IGNORECASE)


def _parse_suggestion_line(line: str) -> Refinement:
    lowered = line.strip().lower()
    if not lowered:
        raise UnparseableSuggestion("empty line")
    hint = None
    m = _PERIOD_RE.search(line)
    if m and "period" in lowered:
        hint = {"period_s": float(m.group(1)), "description": line.strip()}
    tag = None
    for word, family in _FAMILY_WORDS.items():
        if re.search(rf"\b{re.escape(word)}\b", lowered):
            tag = family
            break
    if tag is None and hint is None:
        raise UnparseableSuggestion(f"no family or period in {line!r}")
    params = {k: float(v) for k, v in _KV_RE.findall(line)
              if not k.lower().startswith("period")}
    return Refinement(tag, params or None, hint, line.strip())


def build_refine_prompt(windows: Sequence[TimeWindowSummary],
                        failed: Sequence[DistributionFit]) -> tuple[str, dict]:
    lines = ["The best local distribution fits fell below the acceptance "
             "threshold. Suggest a better-matching family (one per line, "
             "e.g. `normal mu=100 sigma=10`) and note any periodicity as "
             "`periodic period_s=<seconds> <description>`.",
             "", "Failed fits:"]
    for f in failed:
        lines.append(f"  - {f.family.tag}: r_squared={f.r_squared:.4f} "
                     f"over {f.sample_count} samples")
    lines.append("")
    lines.append("Window summaries (start_s, total, value mean/median/mode):")
    for w in windows[:64]:
        vs = w.value_size_stats
        lines.append(f"  {w.window_start_us / 1e6:.0f}s total={w.total_accesses} "
                     f"value={vs.get('mean', 0.0):.1f}/{vs.get('median', 0.0):.1f}"
                     f"/{vs.get('mode', 0.0):.1f} ops={w.op_counts}")
    meta = {
        "kind": "refine",
        "failed_tags": [f.family.tag for f in failed],
        "best_failed_r2": max((f.r_squared for f in failed), default=0.0),
        "windows": [
            {
                "start_s": w.window_start_us / 1e6,
                "total": w.total_accesses,
                "value_mean": w.value_size_stats.get("mean", 0.0),
                "value_median": w.value_size_stats.get("median", 0.0),
                "value_mode": w.value_size_stats.get("mode", 0.0),
                "op_counts": dict(w.op_counts),
            }
            for w in windows
        ],
    }
    return "\n".join(lines), meta


def advisor_refine(windows: Sequence[TimeWindowSummary],
                   failed: Sequence[DistributionFit],
                   advisor: SuggestionAdvisor) -> list[Refinement]:
    """Ask the advisor for candidate families when local fits are poor.

    Suggestions are parsed, never trusted: the caller re-fits them against
    the data before acceptance. An unavailable advisor degrades to a single
    Empirical suggestion.
    """
    text, meta = build_refine_prompt(windows, failed)
    try:
        reply = advisor.complete(text, meta)
    except Exception as exc:
        log.warning("advisor unavailable during refinement: %s", exc)
        return [Refinement(EMPIRICAL, None, None, "fallback: empirical")]
    out: list[Refinement] = []
    for line in reply.splitlines():
        if not line.strip():
            continue
        try:
            out.append(_parse_suggestion_line(line))
        except UnparseableSuggestion as exc:
            log.debug("skipping suggestion line: %s", exc)
    if not out:
        return [Refinement(EMPIRICAL, None, None, "fallback: empirical")]
    return out


# ---------------------------------------------------------------------------
# JSON serialization (shared schema with the workload spec)


def fit_to_json(fit: DistributionFit) -> dict:
    r2 = fit.r_squared
    return {
        "family": {"tag": fit.family.tag, "params": dict(fit.family.params)},
        "r_squared": r2 if math.isfinite(r2) else None,
        "sample_count": fit.sample_count,
    }


def fit_from_json(obj: dict) -> DistributionFit:
    fam = DistributionFamily(obj["family"]["tag"],
                             dict(obj["family"]["params"]))
    r2 = obj["r_squared"]
    return DistributionFit(fam, float("-inf") if r2 is None else float(r2),
                           int(obj["sample_count"]))


def characterization_to_json(ch: WorkloadCharacterization) -> dict:
    return {
        "key_size": fit_to_json(ch.key_size),
        "value_size": fit_to_json(ch.value_size),
        "key_access": fit_to_json(ch.key_access),
        "query_ratios": dict(ch.query_ratios),
        "periodic_hint": ch.periodic_hint,
        "source_windows": [
            {
                "window_start_us": w.window_start_us,
                "window_len_us": w.window_len_us,
                "op_counts": dict(w.op_counts),
                "key_size_stats": dict(w.key_size_stats),
                "value_size_stats": dict(w.value_size_stats),
                "total_accesses": w.total_accesses,
                "distinct_keys": w.distinct_keys,
            }
            for w in ch.source_windows
        ],
    }


def characterization_from_json(obj: dict) -> WorkloadCharacterization:
    return WorkloadCharacterization(
        key_size=fit_from_json(obj["key_size"]),
        value_size=fit_from_json(obj["value_size"]),
        key_access=fit_from_json(obj["key_access"]),
        query_ratios={k: float(v) for k, v in obj["query_ratios"].items()},
        periodic_hint=obj.get("periodic_hint"),
        source_windows=[
            TimeWindowSummary(
                window_start_us=w["window_start_us"],
                window_len_us=w["window_len_us"],
                op_counts={k: int(v) for k, v in w["op_counts"].items()},
                key_size_stats=w["key_size_stats"],
                value_size_stats=w["value_size_stats"],
                total_accesses=w["total_accesses"],
                distinct_keys=w["distinct_keys"],
            )
            for w in obj.get("source_windows", [])
        ],
    )
