"""Genetic-programming baseline: evolve alpha expressions on mean daily IC."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsl
from .dsl import Expr
from .ic import feature_ic
from .market_data import FeaturePanel, OhlcvPanel, WindowDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 200
    generations: int = 30
    tournament_size: int = 5
    p_crossover: float = 0.7
    p_subtree_mutation: float = 0.2
    p_point_mutation: float = 0.1
    max_depth: int = 6
    elitism: int = 5
    seed: int = 0

    def validate(self) -> None:
        for name in ("p_crossover", "p_subtree_mutation", "p_point_mutation"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} must lie in [0, 1]")
        if self.p_crossover + self.p_subtree_mutation + self.p_point_mutation > 1.0 + 1e-12:
            raise ValueError("operator probabilities sum above 1")
        if self.population_size < 1 or self.generations < 0 or self.tournament_size < 1:
            raise ValueError("population_size, tournament_size must be >= 1 and generations >= 0")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError(f"elitism={self.elitism} must be < population_size={self.population_size}")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


@dataclass
class Individual:
    expr: Expr
    train_fitness: float | None = None
    val_fitness: float | None = None
    test_fitness: float | None = None
    degenerate: bool = False

    @property
    def rpn(self) -> str:
        return " ".join(dsl.to_rpn(self.expr))


def fitness(expr: Expr, ds: WindowDataset, panel: OhlcvPanel, split: str = "train",
            with_flag: bool = False):
    """Mean daily exact Spearman IC of ``expr`` over the eligible days of ``split``.

    Cross-sections are restricted to assets with a valid input window, so GP
    and network features are scored on identical samples. Days where the
    feature is constant score 0; ``degenerate`` is set when every day is.
    """
    feat = dsl.evaluate_panel(expr, panel)
    res = feature_ic(feat, ds.returns, ds.splits[split], ds.min_cross_section, universe=ds.valid)
    return (res.mean, res.all_degenerate) if with_flag else res.mean


class _Scorer:
    """Caches train/val fitness by RPN string."""

    def __init__(self, ds: WindowDataset, panel: OhlcvPanel):
        self.ds, self.panel = ds, panel
        self.cache: dict[str, tuple[float, float, bool]] = {}

    def features(self, expr: Expr) -> FeaturePanel:
        return dsl.evaluate_panel(expr, self.panel)

    def score(self, ind: Individual) -> Individual:
        key = ind.rpn
        hit = self.cache.get(key)
        if hit is None:
            feat = self.features(ind.expr)
            ds = self.ds
            tr = feature_ic(feat, ds.returns, ds.splits["train"], ds.min_cross_section, universe=ds.valid)
            va = feature_ic(feat, ds.returns, ds.splits["val"], ds.min_cross_section, universe=ds.valid)
            hit = (tr.mean, va.mean, tr.all_degenerate)
            self.cache[key] = hit
        ind.train_fitness, ind.val_fitness, ind.degenerate = hit
        return ind

    def test_score(self, ind: Individual) -> float:
        ds = self.ds
        return feature_ic(self.features(ind.expr), ds.returns, ds.splits["test"],
                          ds.min_cross_section, universe=ds.valid).mean


# ---------------------------------------------------------------------------
# Variation operators

def truncate(expr: Expr, max_depth: int, rng: np.random.Generator) -> Expr:
    """Replace operator nodes sitting at ``max_depth`` by random terminals."""
    if expr.is_terminal:
        return expr
    if max_depth <= 1:
        return dsl.random_terminal(rng)
    args = tuple(truncate(a, max_depth - 1, rng) for a in expr.args)
    return Expr(expr.op, args, expr.window, expr.value)


def _random_path(expr: Expr, rng: np.random.Generator) -> tuple[int, ...]:
    paths = dsl.node_paths(expr)
    return paths[rng.integers(len(paths))][0]


def _subtree(expr: Expr, path: tuple[int, ...]) -> Expr:
    for i in path:
        expr = expr.args[i]
    return expr


def crossover(a: Expr, b: Expr, max_depth: int, rng: np.random.Generator) -> Expr:
    target = _random_path(a, rng)
    donor = _subtree(b, _random_path(b, rng))
    return truncate(dsl.replace_at(a, target, donor), max_depth, rng)


def subtree_mutation(a: Expr, max_depth: int, rng: np.random.Generator) -> Expr:
    target = _random_path(a, rng)
    new = dsl.random_expr(rng, max(1, max_depth - len(target)))
    return truncate(dsl.replace_at(a, target, new), max_depth, rng)


def point_mutation(a: Expr, rng: np.random.Generator) -> Expr:
    target = _random_path(a, rng)
    node = _subtree(a, target)
    if node.is_terminal:
        for _ in range(8):
            new = dsl.random_terminal(rng)
            if new != node:
                break
        return dsl.replace_at(a, target, new)
    pool = dsl.BINARY if dsl.arity(node.op) == 2 else dsl.UNARY + dsl.WINDOWED
    choices = [o for o in pool if o != node.op]
    name, window = dsl.random_operator(rng, choices)
    if name in dsl.WINDOWED and node.window is not None:
        window = node.window
    return dsl.replace_at(a, target, Expr(name, node.args, window))


def tournament(pop: list[Individual], k: int, rng: np.random.Generator) -> Individual:
    contenders = rng.integers(0, len(pop), size=k)
    best = contenders[0]
    for i in contenders[1:]:
        if pop[i].train_fitness > pop[best].train_fitness:
            best = i
    return pop[best]


def _rank_key(ind: Individual):
    return -ind.train_fitness


def evolve_generation(pop: list[Individual], cfg: GpConfig, rng: np.random.Generator) -> list[Individual]:
    """Next generation; elites keep their fitness, offspring come back unscored."""
    order = sorted(range(len(pop)), key=lambda i: _rank_key(pop[i]))
    nxt = [replace(pop[i]) for i in order[:cfg.elitism]]
    p_cx = cfg.p_crossover
    p_sub = p_cx + cfg.p_subtree_mutation
    p_pt = p_sub + cfg.p_point_mutation
    while len(nxt) < cfg.population_size:
        parent = tournament(pop, cfg.tournament_size, rng)
        r = rng.random()
        if r < p_cx:
            other = tournament(pop, cfg.tournament_size, rng)
            child = crossover(parent.expr, other.expr, cfg.max_depth, rng)
        elif r < p_sub:
            child = subtree_mutation(parent.expr, cfg.max_depth, rng)
        elif r < p_pt:
            child = point_mutation(parent.expr, rng)
        else:
            nxt.append(replace(parent))
            continue
        nxt.append(Individual(child))
    return nxt


@dataclass
class GpResult:
    individuals: list[Individual]
    best_train_history: list[float] = field(default_factory=list)
    n_evaluated: int = 0


def run_gp(cfg: GpConfig, ds: WindowDataset, panel: OhlcvPanel, m: int = 100) -> GpResult:
    """Evolve, then return the top-``m`` distinct expressions by validation IC.

    Every expression scored during the run is a candidate; duplicates are
    removed by RPN string and all-degenerate expressions are dropped.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    scorer = _Scorer(ds, panel)
    pop = [scorer.score(Individual(dsl.random_expr(rng, cfg.max_depth))) for _ in range(cfg.population_size)]
    archive: dict[str, Individual] = {}
    history = []

    def record(population):
        for ind in population:
            archive.setdefault(ind.rpn, ind)
        history.append(max(ind.train_fitness for ind in population))

    record(pop)
    for gen in range(cfg.generations):
        pop = [ind if ind.train_fitness is not None else scorer.score(ind)
               for ind in evolve_generation(pop, cfg, rng)]
        record(pop)
        log.debug("generation %d best train IC %.4f", gen + 1, history[-1])

    candidates = [ind for ind in archive.values() if not ind.degenerate]
    candidates.sort(key=lambda ind: (-ind.val_fitness, -ind.train_fitness, ind.rpn))
    if len(candidates) < m:
        raise ValueError(f"only {len(candidates)} distinct non-degenerate expressions survived; {m} requested")
    top = [replace(ind) for ind in candidates[:m]]
    for ind in top:
        ind.test_fitness = scorer.test_score(ind)
    return GpResult(top, history, len(scorer.cache))
