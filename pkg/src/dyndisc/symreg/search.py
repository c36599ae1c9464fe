"""Genetic-programming search with a complexity/loss Pareto archive.

The loop is a steady generational GP: tournament selection, subtree
crossover, a five-way mutation kernel, probabilistic constant refitting by
Nelder-Mead simplex, and elitism through the Pareto archive (best loss per
complexity level).  A run is fully determined by its seed; different seeds
explore differently and recovery is reported as a success rate over seeds.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .._util import atomic_write_text, fmt_float
from . import expr as ex
from .targets import RegressionTarget


@dataclass(frozen=True)
class SrConfig:
    iterations: int = 800
    population: int = 50
    max_size: int = 25
    constant_complexity: int = 2
    operators: tuple[str, ...] = ("add", "sub", "mul", "div", "inv")
    seed: int = 0
    tournament_size: int = 5
    p_crossover: float = 0.6
    # point-op, point-var, constant-perturb, subtree-replace, simplify-fold
    mutation_weights: tuple[float, ...] = (0.3, 0.2, 0.3, 0.15, 0.05)
    parsimony: float = 0.001
    anneal: bool = False
    p_const_opt: float = 0.2
    const_opt_iters: int = 40
    polish_iters: int = 200
    n_elite: int = 5
    #: evolutionary cycles per reported iteration (each cycle refills the
    #: population once); the archive is consolidated at iteration boundaries
    cycles_per_iteration: int = 5

    def __post_init__(self):
        if min(self.iterations, self.population, self.max_size) < 1:
            raise ValueError("iterations, population and max_size must be positive")
        if self.constant_complexity < 1:
            raise ValueError("constant_complexity must be at least 1")
        bad = set(self.operators) - set(ex.BINARY_OPS) - set(ex.UNARY_OPS)
        if bad:
            raise ValueError(f"unknown operators {sorted(bad)}")


@dataclass
class FrontRow:
    complexity: int
    loss: float
    score: float
    expr: ex.Expr
    text: str


@dataclass
class ParetoFront:
    rows: list[FrontRow]
    var_names: tuple[str, ...]
    target_name: str = ""
    meta: dict = field(default_factory=dict)

    def best_row(self) -> FrontRow:
        """Highest-score row: the accepted accuracy/complexity trade-off."""
        return max(self.rows, key=lambda r: (r.score, -r.complexity))

    def min_loss_row(self) -> FrontRow:
        return self.rows[-1]

    def save(self, path, config_hash: str | None = None) -> None:
        buf = io.StringIO()
        if config_hash:
            buf.write(f"# config: {config_hash}\n")
        buf.write(f"# variables: {','.join(self.var_names)}\n")
        buf.write(f"# target: {self.target_name}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["complexity", "loss", "score", "expression"])
        for r in self.rows:
            writer.writerow([r.complexity, fmt_float(r.loss), fmt_float(r.score),
                             r.text])
        atomic_write_text(path, buf.getvalue())

    @classmethod
    def load(cls, path) -> "ParetoFront":
        var_names: tuple[str, ...] = ()
        target_name = ""
        rows = []
        body = []
        for line in Path(path).read_text().splitlines():
            if line.startswith("# variables:"):
                var_names = tuple(line.split(":", 1)[1].strip().split(","))
            elif line.startswith("# target:"):
                target_name = line.split(":", 1)[1].strip()
            elif line and not line.startswith("#"):
                body.append(line)
        for rec in csv.DictReader(body):
            e = ex.parse_expression(rec["expression"], var_names)
            rows.append(FrontRow(int(rec["complexity"]), float(rec["loss"]),
                                 float(rec["score"]), e, rec["expression"]))
        return cls(rows, var_names, target_name)


def pareto_scores(complexities, losses) -> list[float]:
    """First row scores 0; afterwards the log loss-ratio per added unit of
    complexity, floored at zero."""
    scores = [0.0]
    for i in range(1, len(losses)):
        prev = max(losses[i - 1], 1e-300)
        cur = max(losses[i], 1e-300)
        dc = complexities[i] - complexities[i - 1]
        scores.append(max(0.0, float(np.log(prev / cur)) / dc))
    return scores


def loss_of(e: ex.Expr, target: RegressionTarget) -> float:
    with np.errstate(all="ignore"):
        pred = ex.evaluate(e, target.inputs)
        d = pred - target.target
        val = float(np.dot(d, d) / d.size)
    return val if np.isfinite(val) else np.inf


def fit_constants(e: ex.Expr, target: RegressionTarget,
                  max_iter: int = 200) -> tuple[ex.Expr, float]:
    """Refit all constants by Nelder-Mead from their current values.

    Returns the improved-or-equal tree with its loss; the structure is
    never altered and failures fall back to the input tree.
    """
    base_loss = loss_of(e, target)
    x0 = np.array(ex.constants(e))
    if x0.size == 0:
        return e, base_loss

    def objective(vals):
        v = loss_of(ex.with_constants(e, vals), target)
        return v if np.isfinite(v) else 1e100

    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"maxiter": max_iter, "xatol": 1e-12, "fatol": 1e-14})
    if np.isfinite(res.fun) and res.fun < base_loss:
        return ex.with_constants(e, res.x), float(res.fun)
    return e, base_loss


# --------------------------------------------------------------------------
# random trees and variation operators


def _random_terminal(rng, n_inputs: int, budget: int, cfg: SrConfig) -> ex.Expr:
    if budget >= cfg.constant_complexity and rng.random() < 0.3:
        return ex.Const(float(rng.normal(0.0, 2.0)))
    return ex.Var(int(rng.integers(n_inputs)))


def random_expr(rng, n_inputs: int, budget: int, cfg: SrConfig) -> ex.Expr:
    """Grow a random tree whose complexity stays within ``budget``."""
    binaries = [op for op in cfg.operators if op in ex.BINARY_OPS]
    unaries = [op for op in cfg.operators if op in ex.UNARY_OPS]
    if budget < 3 or rng.random() < 0.3:
        return _random_terminal(rng, n_inputs, budget, cfg)
    if unaries and rng.random() < 0.12:
        return ex.Unary(unaries[int(rng.integers(len(unaries)))],
                        random_expr(rng, n_inputs, budget - 1, cfg))
    op = binaries[int(rng.integers(len(binaries)))]
    left_budget = int(rng.integers(1, budget - 1))
    left = random_expr(rng, n_inputs, left_budget, cfg)
    right = random_expr(rng, n_inputs, budget - 1 - ex.complexity(left, cfg.constant_complexity), cfg)
    return ex.Binary(op, left, right)


def _perturb_constant(rng, value: float) -> float:
    if abs(value) < 1e-8:
        return float(rng.normal(0.0, 1.0))
    new = value * float(np.exp(rng.normal(0.0, 0.5)))
    if rng.random() < 0.1:
        new = -new
    return new


def mutate(rng, e: ex.Expr, cfg: SrConfig, n_inputs: int) -> ex.Expr:
    kind = int(rng.choice(5, p=np.asarray(cfg.mutation_weights) / sum(cfg.mutation_weights)))
    paths = list(ex.iter_paths(e))
    if kind == 0:  # point-op on a binary node
        binaries = [p for p, n in paths if isinstance(n, ex.Binary)]
        ops = [op for op in cfg.operators if op in ex.BINARY_OPS]
        if binaries and len(ops) > 1:
            path = binaries[int(rng.integers(len(binaries)))]
            node = ex.get_node(e, path)
            alternatives = [op for op in ops if op != node.op]
            new_op = alternatives[int(rng.integers(len(alternatives)))]
            return ex.replace_node(e, path, ex.Binary(new_op, node.left, node.right))
        kind = 3
    if kind == 1:  # point-var: any leaf becomes a variable
        leaves = [(p, n) for p, n in paths if isinstance(n, (ex.Var, ex.Const))]
        if leaves:
            path, node = leaves[int(rng.integers(len(leaves)))]
            if isinstance(node, ex.Var) and n_inputs > 1:
                choices = [i for i in range(n_inputs) if i != node.index]
            else:
                choices = list(range(n_inputs))
            return ex.replace_node(e, path, ex.Var(choices[int(rng.integers(len(choices)))]))
        kind = 3
    if kind == 2:  # constant-perturb
        consts = [p for p, n in paths if isinstance(n, ex.Const)]
        if consts:
            path = consts[int(rng.integers(len(consts)))]
            node = ex.get_node(e, path)
            return ex.replace_node(e, path, ex.Const(_perturb_constant(rng, node.value)))
        kind = 3
    if kind == 4:  # simplify-fold
        return ex.fold_constants(e)
    # subtree-replace (also the fallback for inapplicable kernels)
    path = paths[int(rng.integers(len(paths)))][0]
    removed = ex.get_node(e, path)
    budget = cfg.max_size - (ex.complexity(e, cfg.constant_complexity)
                             - ex.complexity(removed, cfg.constant_complexity))
    return ex.replace_node(e, path, random_expr(rng, n_inputs, max(1, budget), cfg))


def crossover(rng, parent: ex.Expr, donor: ex.Expr, cfg: SrConfig) -> ex.Expr:
    """Replace a random subtree of ``parent`` with one from ``donor``."""
    p_paths = [p for p, _ in ex.iter_paths(parent)]
    d_nodes = [n for _, n in ex.iter_paths(donor)]
    for _ in range(4):
        path = p_paths[int(rng.integers(len(p_paths)))]
        graft = d_nodes[int(rng.integers(len(d_nodes)))]
        child = ex.replace_node(parent, path, graft)
        if ex.complexity(child, cfg.constant_complexity) <= cfg.max_size:
            return child
    return parent


# --------------------------------------------------------------------------
# the search itself


class _Archive:
    """Best (loss, expr) per complexity level, 1..max_size."""

    def __init__(self, cfg: SrConfig):
        self.cfg = cfg
        self.best: dict[int, tuple[float, ex.Expr]] = {}

    def consider(self, e: ex.Expr, loss: float) -> bool:
        if not np.isfinite(loss):
            return False
        c = ex.complexity(e, self.cfg.constant_complexity)
        if c > self.cfg.max_size:
            return False
        held = self.best.get(c)
        if held is None or loss < held[0]:
            self.best[c] = (loss, e)
            return True
        return False

    def elites(self, k: int) -> list[tuple[ex.Expr, float]]:
        rows = sorted(self.best.items(), key=lambda kv: (kv[1][0], kv[0]))
        return [(e, loss) for _, (loss, e) in rows[:k]]

    def front_rows(self) -> list[tuple[int, float, ex.Expr]]:
        rows = []
        best_loss = np.inf
        for c in sorted(self.best):
            loss, e = self.best[c]
            if loss < best_loss:
                rows.append((c, loss, e))
                best_loss = loss
        return rows


def _penalized(loss: float, comp: int, cfg: SrConfig) -> float:
    if not np.isfinite(loss):
        return np.inf
    return loss * (1.0 + cfg.parsimony * comp)


def search(cfg: SrConfig, target: RegressionTarget) -> ParetoFront:
    """Evolve expressions against one regression target.

    The returned front has strictly increasing complexity and strictly
    decreasing loss; its first row always exists because the population is
    seeded with every input variable and the least-squares constant.
    """
    rng = np.random.default_rng(cfg.seed)
    n_inputs = target.n_inputs
    archive = _Archive(cfg)

    def evaluated(e: ex.Expr) -> tuple[ex.Expr, float]:
        return e, loss_of(e, target)

    population: list[tuple[ex.Expr, float]] = []
    for i in range(n_inputs):
        population.append(evaluated(ex.Var(i)))
    population.append(evaluated(ex.Const(float(np.mean(target.target)))))
    while len(population) < cfg.population:
        e = random_expr(rng, n_inputs, cfg.max_size, cfg)
        population.append(evaluated(e))
    population = population[: cfg.population]
    for e, loss in population:
        archive.consider(e, loss)

    comps = [ex.complexity(e, cfg.constant_complexity) for e, _ in population]

    def tournament() -> tuple[ex.Expr, float]:
        idx = rng.integers(len(population), size=cfg.tournament_size)
        best = min(idx, key=lambda i: (_penalized(population[i][1], comps[i], cfg), i))
        return population[best]

    for gen in range(cfg.iterations):
        children: list[tuple[ex.Expr, float]] = list(archive.elites(cfg.n_elite))
        while len(children) < cfg.population:
            parent, parent_loss = tournament()
            if rng.random() < cfg.p_crossover:
                donor, _ = tournament()
                child = crossover(rng, parent, donor, cfg)
            else:
                child = mutate(rng, parent, cfg, n_inputs)
                if ex.complexity(child, cfg.constant_complexity) > cfg.max_size:
                    child = parent
            loss = loss_of(child, target)
            if (np.isfinite(loss) and ex.constant_paths(child)
                    and rng.random() < cfg.p_const_opt):
                child, loss = fit_constants(child, target, cfg.const_opt_iters)
            if cfg.anneal and np.isfinite(parent_loss) and loss > parent_loss:
                temp = max(0.1, 1.0 - gen / cfg.iterations)
                if rng.random() > float(np.exp(-(loss - parent_loss)
                                               / (temp * max(parent_loss, 1e-30)))):
                    child, loss = parent, parent_loss
            if archive.consider(child, loss):
                polished, ploss = fit_constants(child, target, cfg.const_opt_iters)
                if ploss < loss:
                    archive.consider(polished, ploss)
                    child, loss = polished, ploss
            children.append((child, loss))
        population = children
        comps = [ex.complexity(e, cfg.constant_complexity) for e, _ in population]

    # final polish of the archive rows at full simplex budget
    for c, loss, e in list(archive.front_rows()):
        polished, ploss = fit_constants(e, target, cfg.polish_iters)
        archive.consider(polished, ploss)

    rows = archive.front_rows()
    scores = pareto_scores([r[0] for r in rows], [r[1] for r in rows])
    front_rows = [FrontRow(c, loss, s, e, ex.to_infix(e, target.var_names))
                  for (c, loss, e), s in zip(rows, scores)]
    return ParetoFront(front_rows, tuple(target.var_names), target.target_name,
                       {"seed": cfg.seed, "iterations": cfg.iterations,
                        "population": cfg.population})
