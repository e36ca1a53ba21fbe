"""Load-history identification by a real-coded genetic algorithm.

The trained network is used as a black-box forward map: a genome (the five
free control values) becomes a smooth load curve, the network predicts the
fields, and fitness is the inverse MAE between the predicted and target
mean-stress histories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rbi import profile_from_genome

FITNESS_GUARD = 1e-12


@dataclass
class GaConfig:
    generations: int = 25
    population: int = 100
    parents_mating: int = 10
    lo: float = -5.5
    hi: float = 5.5
    n_genes: int = 5
    mutation_fraction: float = 0.2
    mutation_scale: float | None = None  # default 0.1 * (hi - lo)
    elitism: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.population >= self.parents_mating >= 2:
            raise ValueError("need population >= parents_mating >= 2")
        if not self.lo < self.hi:
            raise ValueError("gene bounds must satisfy lo < hi")
        if not 0 <= self.elitism < self.population:
            raise ValueError("elitism must be in [0, population)")
        if self.mutation_scale is None:
            self.mutation_scale = 0.1 * (self.hi - self.lo)


@dataclass
class GaResult:
    best_genome: np.ndarray
    best_fitness: float
    history: list = field(default_factory=list)  # (generation, best, mean)
    population: np.ndarray | None = None


def mean_stress_history(fields, component: int):
    """Node-averaged history of one component: [N, S, C] -> [S] (batched: [B, N, S, C] -> [B, S])."""
    fields = np.asarray(fields)
    if not -fields.shape[-1] <= component < fields.shape[-1]:
        raise IndexError(f"component {component} out of range for C={fields.shape[-1]}")
    return fields[..., component].mean(axis=-2)


class SurrogateObjective:
    """Fitness evaluation against a target history using a trained model."""

    def __init__(self, model, coords, target, component: int = 0, t_total: float = 1.0):
        self.model = model
        self.coords = np.asarray(coords, dtype=np.float64)
        self.target = np.asarray(target, dtype=np.float64)
        self.component = component
        self.t_total = t_total
        S = model.cfg.n_steps
        if self.target.shape != (S,):
            raise ValueError(f"target history has shape {self.target.shape}, model predicts {S} steps")
        if self.coords.ndim != 2 or self.coords.shape[1] != model.cfg.n_coords:
            raise ValueError("coordinate array does not match the model's trunk input")

    def loads(self, genomes):
        S = self.model.cfg.n_steps
        return np.stack([profile_from_genome(g, S, self.t_total).samples for g in np.atleast_2d(genomes)])

    def predicted_history(self, genomes):
        fields = self.model.forward(self.loads(genomes), self.coords, physical=True)  # [B, N, S, C]
        return mean_stress_history(fields, self.component)

    def mae(self, genomes):
        return np.mean(np.abs(self.predicted_history(genomes) - self.target), axis=1)

    def __call__(self, genomes):
        return 1.0 / (self.mae(genomes) + FITNESS_GUARD)


def fitness(model, coords, genome, target, component: int = 0, t_total: float = 1.0) -> float:
    return float(SurrogateObjective(model, coords, target, component, t_total)(genome)[0])


def run_ga(objective, cfg: GaConfig) -> GaResult:
    """Generational GA maximizing ``objective(genomes [P, n_genes]) -> fitness [P]``.

    Steady-state selection of the top ``parents_mating`` individuals,
    single-point crossover between consecutive parents, per-gene uniform
    mutation clamped to the bounds, and ``elitism`` survivors copied along
    with their cached fitness.
    """
    rng = np.random.default_rng(cfg.seed)
    pop = rng.uniform(cfg.lo, cfg.hi, size=(cfg.population, cfg.n_genes))
    fit = np.asarray(objective(pop), dtype=np.float64)
    history = []
    for gen in range(cfg.generations):
        if gen > 0:
            order = np.argsort(-fit, kind="stable")
            parents = pop[order[: cfg.parents_mating]]
            elite, elite_fit = pop[order[: cfg.elitism]], fit[order[: cfg.elitism]]
            n_children = cfg.population - cfg.elitism
            children = np.empty((n_children, cfg.n_genes))
            cuts = rng.integers(1, cfg.n_genes, size=n_children) if cfg.n_genes > 1 else np.ones(n_children, int)
            for k in range(n_children):
                a = parents[k % cfg.parents_mating]
                b = parents[(k + 1) % cfg.parents_mating]
                children[k, : cuts[k]] = a[: cuts[k]]
                children[k, cuts[k] :] = b[cuts[k] :]
            mask = rng.random(children.shape) < cfg.mutation_fraction
            noise = rng.uniform(-cfg.mutation_scale, cfg.mutation_scale, size=children.shape)
            children = np.clip(children + mask * noise, cfg.lo, cfg.hi)
            child_fit = np.asarray(objective(children), dtype=np.float64)
            pop = np.concatenate([elite, children])
            fit = np.concatenate([elite_fit, child_fit])
        history.append((gen, float(fit.max()), float(fit.mean())))
    best = int(np.argmax(fit))
    return GaResult(pop[best].copy(), float(fit[best]), history, pop)
