"""Constrained NSGA-II over the integer design grid."""

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .geometry import PARAM_GRID, GeometryParams, snap_params
from .structural import SF_THRESHOLD

QP_PENALTY = 1e6

_LOWER = np.array([lo for lo, _, _ in PARAM_GRID.values()], dtype=float)
_UPPER = np.array([hi for _, hi, _ in PARAM_GRID.values()], dtype=float)
_STEP = np.array([step for _, _, step in PARAM_GRID.values()], dtype=float)
_LEVELS = (_UPPER - _LOWER) / _STEP


class OptimizationError(RuntimeError):
    """The search cannot proceed (no feasible design to start from)."""


@dataclass
class Individual:
    theta: GeometryParams
    objectives: Optional[tuple] = None
    sf: float = 0.0
    # None when the flight was skipped by the structural gate
    qp_ok: Optional[bool] = None
    feasible: bool = False
    violation: float = 0.0
    rank: int = 0
    crowding: float = 0.0
    cause: str = ""
    generation: int = 0

    @classmethod
    def evaluated(cls, theta: GeometryParams, sf: float, qp_ok: Optional[bool],
                  objectives: Optional[tuple] = None, cause: str = "", generation: int = 0,
                  sf_threshold: float = SF_THRESHOLD, penalty: float = QP_PENALTY) -> "Individual":
        shortfall = 0.0 if math.isinf(sf) else max(0.0, sf_threshold - sf)
        violation = shortfall + (penalty if qp_ok is False else 0.0)
        feasible = bool(sf >= sf_threshold and qp_ok is True and objectives is not None)
        return cls(theta, tuple(float(v) for v in objectives) if objectives is not None else None,
                   float(sf), qp_ok, feasible, float(violation), cause=cause, generation=generation)

    def to_record(self) -> dict:
        return {
            "theta": list(self.theta.as_tuple()),
            "objectives": list(self.objectives) if self.objectives is not None else None,
            "sf": self.sf,
            "qp_ok": self.qp_ok,
            "feasible": self.feasible,
            "violation": self.violation,
            "cause": self.cause,
            "generation": self.generation,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Individual":
        sf = record.get("sf", 0.0)
        sf = float(sf)
        objectives = record.get("objectives")
        return cls(
            theta=GeometryParams.from_sequence(record["theta"]),
            objectives=tuple(float(v) for v in objectives) if objectives is not None else None,
            sf=sf,
            qp_ok=record.get("qp_ok"),
            feasible=bool(record.get("feasible", False)),
            violation=float(record.get("violation", 0.0)),
            cause=record.get("cause", ""),
            generation=int(record.get("generation", 0)),
        )


@dataclass
class OptimizerConfig:
    population_size: int = 25
    generations: int = 40
    crossover_probability: float = 0.9
    mutation_probability: float = 0.25
    gene_mutation_probability: float = 0.25
    sbx_eta: float = 15.0
    mutation_eta: float = 20.0
    seed: int = 42

    @classmethod
    def from_dict(cls, data: Optional[dict], seed: Optional[int] = None) -> "OptimizerConfig":
        data = dict(data or {})
        if seed is not None:
            data["seed"] = seed
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        config = cls(**known)
        problems = config.check()
        if problems:
            raise ValueError("Invalid optimizer config: " + "; ".join(problems))
        return config

    def check(self) -> list[str]:
        problems = []
        for name in ("crossover_probability", "mutation_probability", "gene_mutation_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        if self.population_size < 2:
            problems.append("population_size must be at least 2")
        if self.generations < 0:
            problems.append("generations must be non-negative")
        if self.sbx_eta < 0 or self.mutation_eta < 0:
            problems.append("distribution indices must be non-negative")
        return problems


@dataclass
class ParetoFront:
    members: list
    evaluations: int = 0
    infeasible: int = 0
    generations: int = 0

    def __len__(self) -> int:
        return len(self.members)

    def thetas(self) -> list[GeometryParams]:
        return [ind.theta for ind in self.members]


@dataclass
class EvolutionResult:
    front: ParetoFront
    archive: list
    population: list
    history: list = field(default_factory=list)


def _pareto_dominates(a: tuple, b: tuple) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def constrained_dominates(a: Individual, b: Individual) -> bool:
    if a.feasible and not b.feasible:
        return True
    if b.feasible and not a.feasible:
        return False
    if not a.feasible:
        return a.violation < b.violation
    return _pareto_dominates(a.objectives, b.objectives)


def non_dominated_sort(population: list) -> list[list[int]]:
    """Fronts of population indices; each individual's rank is written back."""
    size = len(population)
    dominated = [[] for _ in range(size)]
    counts = [0] * size
    fronts = [[]]
    for p in range(size):
        for q in range(p + 1, size):
            if constrained_dominates(population[p], population[q]):
                dominated[p].append(q)
                counts[q] += 1
            elif constrained_dominates(population[q], population[p]):
                dominated[q].append(p)
                counts[p] += 1
    for p in range(size):
        if counts[p] == 0:
            fronts[0].append(p)

    i = 0
    while fronts[i]:
        following = []
        for p in fronts[i]:
            population[p].rank = i
            for q in dominated[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    following.append(q)
        i += 1
        fronts.append(sorted(following))
    return fronts[:-1]


def _crowding_values(ind: Individual) -> tuple:
    return ind.objectives if ind.feasible else (ind.violation,)


def crowding_distance(front: list) -> list[float]:
    size = len(front)
    if size <= 2:
        distances = [math.inf] * size
    else:
        distances = [0.0] * size
        values = [_crowding_values(ind) for ind in front]
        for m in range(len(values[0])):
            order = sorted(range(size), key=lambda i: (values[i][m], front[i].theta))
            low, high = values[order[0]][m], values[order[-1]][m]
            distances[order[0]] = distances[order[-1]] = math.inf
            if high == low:
                continue
            for j in range(1, size - 1):
                i = order[j]
                if not math.isinf(distances[i]):
                    distances[i] += (values[order[j + 1]][m] - values[order[j - 1]][m]) / (high - low)
    for ind, d in zip(front, distances):
        ind.crowding = d
    return distances


def assign_fitness(population: list) -> list[list[int]]:
    fronts = non_dominated_sort(population)
    for front in fronts:
        crowding_distance([population[i] for i in front])
    return fronts


def sobol_init(config: OptimizerConfig, size: Optional[int] = None, scramble: bool = False) -> list[GeometryParams]:
    """First Sobol points after the origin, mapped onto the grid in (angle, distance, offset, length) order."""
    size = size or config.population_size
    sampler = qmc.Sobol(d=len(PARAM_GRID), scramble=scramble, seed=config.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        if not scramble:
            sampler.fast_forward(1)
        points = sampler.random(size)
    return [snap_params(_LOWER + p * (_UPPER - _LOWER)) for p in points]


def _to_genes(theta: GeometryParams) -> np.ndarray:
    return (np.array(theta.as_tuple(), dtype=float) - _LOWER) / _STEP


def _from_genes(genes: np.ndarray) -> GeometryParams:
    index = np.clip(np.rint(genes), 0, _LEVELS)
    return snap_params(_LOWER + index * _STEP)


def _sbx_pair(x1: np.ndarray, x2: np.ndarray, eta: float, rng: np.random.Generator):
    c1, c2 = x1.copy(), x2.copy()
    for i in range(len(x1)):
        if rng.random() > 0.5 or abs(x1[i] - x2[i]) < 1e-14:
            continue
        lo, hi = 0.0, _LEVELS[i]
        y1, y2 = min(x1[i], x2[i]), max(x1[i], x2[i])
        u = rng.random()
        children = []
        for gap in (y1 - lo, hi - y2):
            beta = 1.0 + 2.0 * gap / (y2 - y1)
            alpha = 2.0 - beta ** (-(eta + 1.0))
            if u <= 1.0 / alpha:
                beta_q = (u * alpha) ** (1.0 / (eta + 1.0))
            else:
                beta_q = (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
            children.append(beta_q)
        a = 0.5 * ((y1 + y2) - children[0] * (y2 - y1))
        b = 0.5 * ((y1 + y2) + children[1] * (y2 - y1))
        a, b = np.clip(a, lo, hi), np.clip(b, lo, hi)
        if rng.random() < 0.5:
            a, b = b, a
        c1[i], c2[i] = a, b
    return c1, c2


def _polynomial_mutation(x: np.ndarray, eta: float, gene_probability: float, rng: np.random.Generator):
    y = x.copy()
    for i in range(len(x)):
        if rng.random() >= gene_probability:
            continue
        lo, hi = 0.0, _LEVELS[i]
        d1, d2 = (y[i] - lo) / (hi - lo), (hi - y[i]) / (hi - lo)
        u = rng.random()
        power = 1.0 / (eta + 1.0)
        if u < 0.5:
            val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)
            delta = val ** power - 1.0
        else:
            val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)
            delta = 1.0 - val ** power
        y[i] = np.clip(y[i] + delta * (hi - lo), lo, hi)
    return y


def tournament(population: list, count: int, rng: np.random.Generator) -> list:
    """Binary tournament on (rank, crowding)."""
    chosen = []
    for _ in range(count):
        i, j = rng.integers(len(population), size=2)
        a, b = population[i], population[j]
        if (a.rank, -a.crowding) < (b.rank, -b.crowding):
            chosen.append(a)
        elif (b.rank, -b.crowding) < (a.rank, -a.crowding):
            chosen.append(b)
        else:
            chosen.append(a if rng.random() < 0.5 else b)
    return chosen


def make_offspring(parents: list, config: OptimizerConfig, rng: np.random.Generator) -> list[GeometryParams]:
    """SBX and polynomial mutation on real-relaxed grid indices, then snap and clamp."""
    thetas = [p.theta if isinstance(p, Individual) else p for p in parents]
    children = []
    for k in range(0, len(thetas), 2):
        x1 = _to_genes(thetas[k])
        x2 = _to_genes(thetas[k + 1]) if k + 1 < len(thetas) else x1.copy()
        if rng.random() < config.crossover_probability:
            x1, x2 = _sbx_pair(x1, x2, config.sbx_eta, rng)
        pair = []
        for x in (x1, x2):
            if rng.random() < config.mutation_probability:
                x = _polynomial_mutation(x, config.mutation_eta, config.gene_mutation_probability, rng)
            pair.append(_from_genes(x))
        children.extend(pair)
    return children[:len(thetas)]


def survive(candidates: list, size: int) -> list:
    """Elitist (mu + lambda) truncation; duplicates of a design are kept only to fill gaps."""
    unique, duplicates, seen = [], [], set()
    for ind in sorted(candidates, key=lambda c: c.theta):
        (duplicates if ind.theta in seen else unique).append(ind)
        seen.add(ind.theta)
    pool = unique if len(unique) >= size else unique + duplicates

    fronts = assign_fitness(pool)
    survivors = []
    for front in fronts:
        members = [pool[i] for i in front]
        if len(survivors) + len(members) <= size:
            survivors.extend(members)
            continue
        members.sort(key=lambda c: (-c.crowding, c.theta))
        survivors.extend(members[:size - len(survivors)])
        break
    assign_fitness(survivors)
    return survivors


def feasible_front(population: list) -> list:
    feasible = [ind for ind in population if ind.feasible]
    if not feasible:
        return []
    fronts = non_dominated_sort(feasible)
    return sorted((feasible[i] for i in fronts[0]), key=lambda c: c.theta)


def evolve(config: OptimizerConfig, evaluate_many: Callable[[list, int], list],
           progress: Optional[Callable[[int, list], None]] = None,
           archive: Optional[Callable[[], list]] = None) -> EvolutionResult:
    """NSGA-II generational loop.

    ``evaluate_many(thetas, generation)`` returns one Individual per theta
    (memoized by the caller); ``archive()`` returns every Individual ever
    evaluated. Neither may depend on evaluation order.
    """
    rng = np.random.default_rng(config.seed)
    evaluated = {}

    def run(thetas, generation):
        individuals = evaluate_many(thetas, generation)
        for ind in individuals:
            evaluated.setdefault(ind.theta, ind)
        return [replace(ind) for ind in individuals]

    population = run(sobol_init(config), 0)
    if not any(ind.feasible for ind in population):
        population = run(sobol_init(config, scramble=True), 0)
        if not any(ind.feasible for ind in population):
            causes = sorted({ind.cause for ind in population if ind.cause})
            raise OptimizationError("No feasible design in the initial population after re-sampling; "
                                    f"causes: {'; '.join(causes) or 'unknown'}")
    population = survive(population, config.population_size)
    history = [[ind.theta for ind in population]]
    if progress:
        progress(0, population)

    for generation in range(1, config.generations + 1):
        parents = tournament(population, config.population_size, rng)
        children = run(make_offspring(parents, config, rng), generation)
        population = survive(population + children, config.population_size)
        history.append([ind.theta for ind in population])
        if progress:
            progress(generation, population)

    members = feasible_front(population)
    for ind in members:
        ind.rank = 0
    everything = archive() if archive is not None else sorted(evaluated.values(), key=lambda c: c.theta)
    front = ParetoFront(
        members=members,
        evaluations=len(everything),
        infeasible=sum(1 for ind in everything if not ind.feasible),
        generations=config.generations,
    )
    return EvolutionResult(front, everything, population, history)
