"""
The Wiener series of an obstacle set at infinity.

The point at infinity is regular for the mixed problem when

    sum_j cap_{p,G_{j-1}}(F n (G_j \\ G_{2j}))^{1/(p-1)} = infinity.

Only finitely many terms can be computed, so classify_infinity reads the
trend of the computed terms with fixed thresholds and may answer
inconclusive.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from chevah.cylinder_wiener.capacity import cap_neumann_cylinder
from chevah.cylinder_wiener.geometry import (
    ObstacleSet,
    Slab,
    SolidBall,
    SubBall,
    annular_piece,
    )


REGULAR = 'regular'
IRREGULAR = 'irregular'
INCONCLUSIVE = 'inconclusive'

BOUNDED_NOTE = (
    'The computed terms end in zeros: F is eventually empty, as for a '
    'bounded F.')


@dataclass(frozen=True)
class ClassifierThresholds:
    """
    Decision rule of classify_infinity.

    Regular needs the last half of the powered terms to stay above
    `floor_fraction` of their median and the partial sums to grow by at
    least `growth_fraction` of the linear rate over the last half.
    Irregular needs a geometric fit with ratio at most `decay_ratio` and
    a coefficient of determination of at least `r_squared`.
    """
    floor_fraction: float = 0.1
    growth_fraction: float = 0.5
    decay_ratio: float = 0.9
    r_squared: float = 0.95
    minimum_terms: int = 8


@dataclass
class WienerSeries:
    p: float
    indices: list
    terms: list
    sensitive: list = field(default_factory=list)
    converged: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.indices) != len(self.terms):
            raise ValueError('Series indices and terms differ in length.')
        if any(term < 0 for term in self.terms):
            raise ValueError('Wiener terms must be nonnegative.')

    @property
    def jmax(self):
        return max(self.indices) if self.indices else 0

    @property
    def all_converged(self):
        return all(self.converged)

    @property
    def powered_terms(self):
        return [term ** (1.0 / (self.p - 1.0)) for term in self.terms]

    @property
    def partial_sums(self):
        return [float(v) for v in np.cumsum(self.powered_terms)]

    def rows(self):
        """
        (j, term, powered term, partial sum) for every computed index.
        """
        return list(zip(
            self.indices, self.terms, self.powered_terms,
            self.partial_sums))

    def to_dict(self):
        return {
            'p': self.p,
            'indices': list(self.indices),
            'terms': list(self.terms),
            'powered_terms': self.powered_terms,
            'partial_sums': self.partial_sums,
            'sensitive': list(self.sensitive),
            'converged': list(self.converged),
            }


@dataclass
class RegularityVerdict:
    verdict: str
    evidence: dict
    jmax: int
    note: str = ''

    def to_dict(self):
        return {
            'verdict': self.verdict,
            'evidence': dict(self.evidence),
            'jmax': self.jmax,
            'note': self.note,
            }


def _term_result(F, j, p, resolution, settings, sensitivity, kind):
    piece = annular_piece(F, j)
    result = cap_neumann_cylinder(
        piece, float(j - 1), p, resolution=resolution, settings=settings,
        sensitivity=sensitivity, kind=kind)
    logging.debug(f'Wiener term {j}: {result.value:.6g}.')
    return result


def wiener_term(F, j, p, resolution=None, settings=None, sensitivity=False,
                kind='auto'):
    """
    cap_{p,G_{j-1}}(F n (closure(G_j) \\ G_{2j})), zero for an empty
    annular piece.
    """
    return _term_result(
        F, j, p, resolution, settings, sensitivity, kind).value


def wiener_series(F, p, jmax=12, resolution=None, settings=None, threads=1,
                  sensitivity=False, kind='auto'):
    """
    Compute the terms j = 1..jmax, `threads` of them at a time.
    """
    if jmax < 1:
        raise ValueError(f'jmax must be >= 1, got {jmax}.')
    if threads < 1:
        raise ValueError(f'threads must be >= 1, got {threads}.')
    if jmax < 4:
        logging.warning(
            f'Wiener series with jmax={jmax} is too short to classify.')
    indices = list(range(1, jmax + 1))

    def compute(j):
        return _term_result(
            F, j, p, resolution, settings, sensitivity, kind)

    with ThreadPoolExecutor(max_workers=threads) as executor:
        results = list(executor.map(compute, indices))

    series = WienerSeries(
        p=p,
        indices=indices,
        terms=[r.value for r in results],
        sensitive=[bool(r.sensitivity.get('sensitive')) for r in results],
        converged=[r.converged for r in results],
        )
    failed = [j for j, r in zip(indices, results) if not r.converged]
    if failed:
        logging.warning(
            f'Wiener terms without convergence: '
            f'{", ".join(str(j) for j in failed)}.')
    logging.info(
        f'Wiener series up to j={jmax}: partial sum '
        f'{series.partial_sums[-1]:.6g}.')
    return series


def _linear_fit(x, y):
    """
    Least squares y = a + b x. Return (b, a, r_squared).
    """
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (intercept + slope * x)
    spread = np.sum((y - np.mean(y)) ** 2)
    if spread == 0:
        r_squared = 1.0
    else:
        r_squared = 1.0 - float(np.sum(residual ** 2)) / float(spread)
    return float(slope), float(intercept), r_squared


def classify_infinity(series, thresholds=None):
    """
    Read the verdict on the point at infinity from a computed series.
    """
    thresholds = thresholds or ClassifierThresholds()
    powered = np.asarray(series.powered_terms, dtype=float)
    indices = np.asarray(series.indices, dtype=float)
    count = len(powered)

    if count and np.all(powered[count // 2:] == 0):
        return RegularityVerdict(
            verdict=IRREGULAR,
            evidence={'terms': count, 'partial_sum': float(np.sum(powered))},
            jmax=series.jmax, note=BOUNDED_NOTE)

    evidence = {'terms': count}
    if count < thresholds.minimum_terms:
        return RegularityVerdict(
            verdict=INCONCLUSIVE, evidence=evidence, jmax=series.jmax,
            note=(
                f'At least {thresholds.minimum_terms} terms are needed, '
                f'got {count}.'))

    median = float(np.median(powered))
    half = count // 2
    sums = np.cumsum(powered)
    floor = float(np.min(powered[half:]))
    if median > 0:
        growth = float(sums[-1] - sums[half - 1]) / ((count - half) * median)
    else:
        growth = 0.0
    evidence.update({
        'median': median,
        'last_half_minimum': floor,
        'growth_fraction': growth,
        'partial_sum': float(sums[-1]),
        })

    positive = powered > 0
    if np.sum(positive) >= 3:
        slope, _, r_squared = _linear_fit(
            indices[positive], np.log(powered[positive]))
        power, _, power_r_squared = _linear_fit(
            np.log(indices[positive]), np.log(powered[positive]))
        evidence.update({
            'decay_exponent': -slope,
            'decay_ratio': math.exp(slope),
            'r_squared': r_squared,
            'power_exponent': -power,
            'power_r_squared': power_r_squared,
            })
    # The first terms carry the distance to the zero level, the tail
    # shows the asymptotic rate.
    tail = positive & (indices > indices[half - 1])
    if np.sum(tail) >= 3:
        tail_slope, _, _ = _linear_fit(
            indices[tail], np.log(powered[tail]))
        evidence['tail_decay_exponent'] = -tail_slope

    if median > 0 and (
            floor >= thresholds.floor_fraction * median
            and growth >= thresholds.growth_fraction):
        verdict = REGULAR
    elif 'decay_ratio' in evidence and (
            evidence['decay_ratio'] <= thresholds.decay_ratio
            and evidence['r_squared'] >= thresholds.r_squared):
        verdict = IRREGULAR
    else:
        verdict = INCONCLUSIVE
    logging.info(f'Point at infinity classified {verdict}.')
    return RegularityVerdict(
        verdict=verdict, evidence=evidence, jmax=series.jmax)


def example_shrinking_balls(n, p, jmax):
    """
    The base with the balls B((0, i + 1/2), 2^-i), i = 1..2 jmax.

    For 1 < p < n the series converges and infinity is irregular.
    """
    if not 1 < p < n:
        raise ValueError(
            f'Shrinking balls need 1 < p < n, got p={p}, n={n}.')
    balls = tuple(
        SolidBall(center=(0.0,) * (n - 1) + (i + 0.5,), radius=2.0 ** -i)
        for i in range(1, 2 * jmax + 1)
        )
    return ObstacleSet(n=n, primitives=balls)


def example_slabs(radius=0.5, jmax=12, n=3):
    """
    The base with the slabs E x [j, j + 1], j = 1..2 jmax, for the
    cross-section ball E of `radius` around the axis, so every annular
    piece up to jmax is complete.
    """
    if not 0 < radius <= 1:
        raise ValueError(f'Slab radius must be in (0, 1], got {radius}.')
    cross = SubBall(center=(0.0,) * (n - 1), radius=radius)
    slabs = tuple(
        Slab(cross=cross, interval=(j, j + 1))
        for j in range(1, 2 * jmax + 1))
    return ObstacleSet(n=n, primitives=slabs)


@dataclass(frozen=True)
class BuiltinExample:
    name: str
    description: str
    build: object


BUILTIN_EXAMPLES = {
    'shrinking-balls': BuiltinExample(
        name='shrinking-balls',
        description=(
            'Balls of radius 2^-i on the axis at height i + 1/2. '
            'Irregular at infinity for 1 < p < n.'),
        build=lambda n, p, jmax, radius: example_shrinking_balls(
            n, p, jmax),
        ),
    'slabs': BuiltinExample(
        name='slabs',
        description=(
            'Slabs of a cross-section ball over [j, j + 1]. '
            'Regular at infinity.'),
        build=lambda n, p, jmax, radius: example_slabs(radius, jmax, n),
        ),
    }


def builtin_example(name, n, p, jmax=12, radius=0.5):
    try:
        example = BUILTIN_EXAMPLES[name]
    except KeyError:
        raise ValueError(
            f'Unknown example {name}, use one of '
            f'{", ".join(sorted(BUILTIN_EXAMPLES))}.')
    return example.build(n=n, p=p, jmax=jmax, radius=radius)
