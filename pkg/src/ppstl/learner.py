"""Evolutionary extraction of pure-past failure detectors.

Each individual is a ppSTL formula tied to one failure trace and its noisy
copies. A good detector stays negative on a prefix of the failure trace and
turns positive afterwards, while staying negative on every good trace. The
population evolves per failure trace under NSGA-II on
``(maximize margin, minimize good-trace robustness)``; the best candidates
get their thresholds refined with COBYLA and must pass a quality gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from ppstl import formula as fm
from ppstl.engine import robustness
from ppstl.formula import Formula, GenConfig
from ppstl.trace import AugmentedPair, Trace, batch as make_batch

EPS = 1e-6
REPAIR_TRIES = 8
JITTER_STD = 0.1
_CHUNK = 96


@dataclass(frozen=True)
class EAConfig:
    pop_size: int = 500
    max_gen: int = 500
    patience: int = 100
    mut_prob: float = 0.3
    cross_prob: float = 0.9
    fract_good: float = 0.66
    r_interval: int = 2
    k_opt: int = 5
    min_acc: float = 0.75
    max_far: float = 5e-5
    refine_max_iter: int = 50
    init_height: tuple[int, int] = (2, 6)
    bound_cap: int | None = None
    multisignal: bool = False

    def __post_init__(self):
        for name in ("mut_prob", "cross_prob", "fract_good"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.k_opt < 1:
            raise ValueError("k_opt must be >= 1")
        if self.pop_size < 1 or self.max_gen < 0 or self.patience < 1 or self.r_interval < 1:
            raise ValueError("pop_size, patience and r_interval must be positive, max_gen >= 0")


@dataclass(frozen=True)
class FitnessRecord:
    margin: float
    ok_orig: bool
    acc: float
    good_rob_sel: float
    good_rob_es: float
    far: float | None = None
    good_rob_full: float | None = None


@dataclass(frozen=True)
class Individual:
    formula: Formula
    pair_id: int
    fitness: FitnessRecord | None = None


@dataclass(frozen=True)
class Learned:
    """A formula that passed the quality gate, with the pair it was learned on."""

    formula: Formula
    pair_id: int
    fitness: FitnessRecord


@dataclass
class LearnResult:
    formulas: list[Learned]
    generations: int
    hv_history: list[float] = field(default_factory=list)


# fitness math

def score_vector(rob) -> np.ndarray:
    """Split scores of a detector's robustness vector, one per cut point 0..l.

    ``score[i]`` rewards a detector that is negative on ``rob[0..i-1]`` and
    positive at ``i``. The endpoints cover "fires immediately" and "fires
    only after the first sample".
    """
    rob = np.asarray(rob, dtype=float)
    l = len(rob)
    if l == 0:
        raise ValueError("score_vector needs a nonempty robustness vector")
    pm = np.maximum.accumulate(rob)
    tail = rob[1:].max() if l > 1 else -np.inf
    first = np.concatenate([[rob[0] + EPS], pm[:-1], [pm[-1]]])
    second = np.concatenate([rob, [tail]])
    return np.minimum(-np.tanh(first), np.tanh(second))


def trace_margins(values: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """``max(score_vector)`` for every (formula, trace) of a padded robustness block.

    Padding must hold -inf.
    """
    r, m, L = values.shape
    max_rob = values.max(axis=2)
    best = np.minimum(-np.tanh(values[:, :, 0] + EPS), np.tanh(values[:, :, 0]))
    if L > 1:
        pm = np.maximum.accumulate(values, axis=2)
        mid = np.minimum(-np.tanh(pm[:, :, :-1]), np.tanh(values[:, :, 1:]))
        valid = np.arange(1, L)[None, :] < lengths[:, None]
        mid = np.where(valid[None], mid, -np.inf)
        best = np.maximum(best, mid.max(axis=2))
        tail = values[:, :, 1:].max(axis=2)
    else:
        tail = np.full((r, m), -np.inf)
    end = np.minimum(-np.tanh(max_rob), np.tanh(tail))
    return np.maximum(best, end)


@dataclass(frozen=True)
class _Summary:
    rob0: np.ndarray
    max_rob: np.ndarray
    margin: np.ndarray


class FitnessContext:
    """Robustness summaries of formulas over a batch's failure traces and the good set.

    Every formula is evaluated once on all traces and cached; the objectives
    on good-trace samples are then folds over index subsets.
    """

    def __init__(self, pairs: Sequence[AugmentedPair], good: Sequence[Trace], names: Sequence[str]):
        if not good:
            raise ValueError("fitness needs at least one good trace")
        self.names = tuple(names)
        traces: list[Trace] = []
        self.pair_index: list[np.ndarray] = []
        for p in pairs:
            start = len(traces)
            traces.extend(p.traces)
            self.pair_index.append(np.arange(start, len(traces)))
        start = len(traces)
        traces.extend(good)
        self.good_index = np.arange(start, len(traces))
        self.batch = make_batch(traces, self.names)
        self.cache: dict[Formula, _Summary] = {}
        self.engine_calls = 0

    def evaluate(self, formulas: Sequence[Formula]) -> None:
        todo = list(dict.fromkeys(f for f in formulas if f not in self.cache))
        for s in range(0, len(todo), _CHUNK):
            chunk = todo[s: s + _CHUNK]
            rob = robustness(chunk, self.batch)
            self.engine_calls += 1
            margins = trace_margins(rob.values, rob.lengths)
            max_rob = rob.values.max(axis=2)
            for q, f in enumerate(chunk):
                self.cache[f] = _Summary(rob.values[q, :, 0].copy(), max_rob[q].copy(), margins[q].copy())

    def summary(self, f: Formula) -> _Summary:
        if f not in self.cache:
            self.evaluate([f])
        return self.cache[f]

    def fitness(self, f: Formula, pair_id: int, sel: np.ndarray, es: np.ndarray, full: bool = False) -> FitnessRecord:
        s = self.summary(f)
        idx = self.pair_index[pair_id]
        fires_late = (s.rob0[idx] < 0) & (s.max_rob[idx] >= 0)
        rec = FitnessRecord(
            margin=float(s.margin[idx].min()),
            ok_orig=bool(fires_late[0]),
            acc=float(fires_late.mean()),
            good_rob_sel=float(s.max_rob[self.good_index[sel]].max()),
            good_rob_es=float(s.max_rob[self.good_index[es]].max()),
        )
        if full:
            g = s.max_rob[self.good_index]
            rec = replace(rec, far=float((g >= 0).mean()), good_rob_full=float(g.max()))
        return rec


# hypervolume and selection

def _clamp(v):
    return np.clip(np.asarray(v, dtype=float), -1.0, 1.0)


def hypervolume_2d(points, ref: tuple[float, float] = (-1.0, 1.0)) -> float:
    """Area dominated by ``(margin, good_rob)`` points (margin up, good_rob down)
    relative to ``ref``, with both objectives clamped to [-1, 1]."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return 0.0
    x = -_clamp(pts[:, 0])
    y = _clamp(pts[:, 1])
    rx, ry = -float(np.clip(ref[0], -1, 1)), float(np.clip(ref[1], -1, 1))
    order = np.lexsort((y, x))
    hv, level = 0.0, ry
    for k in order:
        if x[k] < rx and y[k] < level:
            hv += (rx - x[k]) * (level - y[k])
            level = y[k]
    return float(hv)


def point_hypervolume(margin: float, good_rob: float) -> float:
    return hypervolume_2d([(margin, good_rob)])


def nondominated_sort(obj: np.ndarray) -> list[np.ndarray]:
    """Fronts of a minimization problem; indices within a front stay ascending."""
    n = len(obj)
    le = (obj[:, None, :] <= obj[None, :, :]).all(axis=2)
    lt = (obj[:, None, :] < obj[None, :, :]).any(axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    assigned = np.zeros(n, dtype=bool)
    while len(current):
        fronts.append(current)
        assigned[current] = True
        count = count - dom[current].sum(axis=0)
        current = np.flatnonzero((count == 0) & ~assigned)
    return fronts


def crowding_distance(obj: np.ndarray) -> np.ndarray:
    n, k = obj.shape
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for j in range(k):
        order = np.argsort(obj[:, j], kind="stable")
        col = obj[order, j]
        span = col[-1] - col[0]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


def nsga2_select(partition: Sequence[Individual], target_size: int) -> list[Individual]:
    """Keep ``target_size`` individuals by non-dominated rank, then crowding distance."""
    if target_size > len(partition):
        raise ValueError(f"target size {target_size} exceeds partition size {len(partition)}")
    if target_size == 0:
        return []
    raw = np.array([(-ind.fitness.margin, ind.fitness.good_rob_sel) for ind in partition])
    clamped = _clamp(raw)
    chosen: list[int] = []
    for front in nondominated_sort(raw):
        if len(chosen) + len(front) <= target_size:
            chosen.extend(front.tolist())
            if len(chosen) == target_size:
                break
            continue
        dist = crowding_distance(clamped[front])
        order = np.argsort(-dist, kind="stable")
        chosen.extend(front[order[: target_size - len(chosen)]].tolist())
        break
    return [partition[k] for k in sorted(chosen)]


# variation

def _internal_paths(f: Formula) -> list[tuple[int, ...]]:
    return [p for p, node in fm.nodes(f) if node.args]


def crossover(a: Individual, b: Individual, rng: np.random.Generator) -> tuple[Individual, Individual]:
    """Subtree exchange or reference-trace exchange, each with probability 1/2."""
    if rng.random() < 0.5:
        pa = [p for p, _ in fm.nodes(a.formula)]
        pb = [p for p, _ in fm.nodes(b.formula)]
        for _ in range(REPAIR_TRIES):
            xa = pa[int(rng.integers(len(pa)))]
            xb = pb[int(rng.integers(len(pb)))]
            sa, sb = fm.subtree(a.formula, xa), fm.subtree(b.formula, xb)
            na = fm.replace_at(a.formula, xa, sb)
            nb = fm.replace_at(b.formula, xb, sa)
            if na.height <= fm.MAX_HEIGHT and nb.height <= fm.MAX_HEIGHT:
                return Individual(na, a.pair_id), Individual(nb, b.pair_id)
    return Individual(a.formula, b.pair_id), Individual(b.formula, a.pair_id)


def mutation_rate(mut_prob: float, generation: int) -> float:
    if generation < 1:
        raise ValueError("generation index starts at 1")
    return mut_prob / generation ** (1.0 / 3.0)


def _jitter(f: Formula, rng: np.random.Generator, bound_cap: int) -> Formula:
    slots = []
    for path, node in fm.nodes(f):
        if node.op == fm.ATOM:
            slots.append((path, "c"))
        elif node.op in fm.TIMED:
            slots.append((path, "lo"))
            if node.interval.hi != fm.INF:
                slots.append((path, "hi"))
    if not slots:
        return f
    path, kind = slots[int(rng.integers(len(slots)))]
    node = fm.subtree(f, path)
    if kind == "c":
        a = node.atom
        lo = -1.0 if len(a.terms) > 1 else 0.0
        c = float(np.clip(a.threshold + rng.normal(0.0, JITTER_STD), lo, 1.0))
        new = Formula(fm.ATOM, atom=a.with_threshold(c))
    else:
        iv = node.interval
        step = 1 if rng.random() < 0.5 else -1
        lo, hi = iv.lo, iv.hi
        if kind == "lo":
            lo = int(np.clip(lo + step, 0, min(bound_cap, hi)))
        else:
            hi = int(np.clip(hi + step, lo, bound_cap))
        new = node.replace(interval=fm.Interval(lo, hi))
    return fm.replace_at(f, path, new)


def mutate(ind: Individual, generation: int, cfg: EAConfig, gen: GenConfig,
           rng: np.random.Generator) -> Individual:
    """With rate ``mut_prob / cbrt(generation)``, apply one random edit:
    operator replacement, shrink, or constant jitter."""
    if rng.random() >= mutation_rate(cfg.mut_prob, generation):
        return ind
    f = ind.formula
    kind = int(rng.integers(3))
    internal = _internal_paths(f)
    if kind < 2 and not internal:
        kind = 2
    if kind == 0:
        path = internal[int(rng.integers(len(internal)))]
        node = fm.subtree(f, path)
        ops = [op for op in (gen.unary_ops if len(node.args) == 1 else gen.binary_ops) if op != node.op]
        if not ops:
            return ind
        op = ops[int(rng.integers(len(ops)))]
        iv = None
        if op in fm.TIMED:
            iv = node.interval if node.interval is not None else fm.random_interval(rng, gen)
        new = Formula(op, node.args, iv)
    elif kind == 1:
        path = internal[int(rng.integers(len(internal)))]
        node = fm.subtree(f, path)
        new = node.args[int(rng.integers(len(node.args)))]
    else:
        return Individual(_jitter(f, rng, gen.bound_cap), ind.pair_id)
    return Individual(fm.replace_at(f, path, new), ind.pair_id)


# constant refinement

def separation(rec: FitnessRecord) -> float:
    """Smaller of the failure margin and the good-trace clearance, both in tanh units."""
    return min(rec.margin, -math.tanh(float(np.clip(rec.good_rob_full, -10.0, 10.0))))


def _refine_key(rec: FitnessRecord) -> tuple:
    feasible = rec.good_rob_full < 0
    return (feasible, separation(rec) if feasible else -rec.good_rob_full)


def refine_constants(ind: Individual, ctx: FitnessContext, sel: np.ndarray, es: np.ndarray,
                     max_iter: int = 50) -> Individual:
    """Re-optimize atom thresholds: maximize separation subject to good_rob_full < 0.

    Maximizing the margin alone drives thresholds onto the good traces'
    boundary; the max-min form keeps them between goods and failures.

    Interval bounds stay fixed. Returns whichever of the input and the
    refined formula scores better (feasible first, then margin).
    """
    base = ind if ind.fitness is not None and ind.fitness.good_rob_full is not None else \
        Individual(ind.formula, ind.pair_id, ctx.fitness(ind.formula, ind.pair_id, sel, es, full=True))
    x0 = fm.thresholds(ind.formula)
    if len(x0) == 0:
        return base
    seen: dict[bytes, FitnessRecord] = {}

    def rec_at(x: np.ndarray) -> FitnessRecord:
        key = np.asarray(x, dtype=float).tobytes()
        if key not in seen:
            f = fm.with_thresholds(ind.formula, x)
            seen[key] = ctx.fitness(f, ind.pair_id, sel, es, full=True)
        return seen[key]

    def objective(x):
        return -separation(rec_at(x))

    def constraint(x):
        # slack keeps points COBYLA returns on the boundary strictly feasible
        return -float(np.clip(rec_at(x).good_rob_full, -10.0, 10.0)) - EPS

    res = minimize(objective, x0, method="COBYLA", constraints=[{"type": "ineq", "fun": constraint}],
                   options={"maxiter": max_iter, "rhobeg": 0.05})
    xr = np.asarray(res.x, dtype=float)
    cand_rec = rec_at(xr)
    if _refine_key(cand_rec) > _refine_key(base.fitness):
        return Individual(fm.with_thresholds(ind.formula, xr), ind.pair_id, cand_rec)
    return base


def passes_gate(rec: FitnessRecord, cfg: EAConfig) -> bool:
    return rec.acc >= cfg.min_acc and rec.ok_orig and rec.far is not None and rec.far <= cfg.max_far


# main loop

def _sample_size(cfg: EAConfig, n_good: int) -> int:
    return min(n_good, max(1, math.ceil(cfg.fract_good * n_good)))


def _partition_sizes(pop_size: int, n_pairs: int) -> list[int]:
    base, extra = divmod(pop_size, n_pairs)
    return [base + (1 if k < extra else 0) for k in range(n_pairs)]


def population_hypervolume(pop: Sequence[Individual]) -> float:
    return hypervolume_2d([(ind.fitness.margin, ind.fitness.good_rob_es) for ind in pop])


def learn_formulas(pairs: Sequence[AugmentedPair], good: Sequence[Trace], names: Sequence[str],
                   cfg: EAConfig, rng: np.random.Generator,
                   on_generation: Callable[[int, float], None] | None = None) -> LearnResult:
    """Evolve one detector per failure pair; return those passing the quality gate."""
    if not pairs:
        return LearnResult([], 0)
    ctx = FitnessContext(pairs, good, names)
    n_good = len(good)
    k = _sample_size(cfg, n_good)
    bound_cap = cfg.bound_cap if cfg.bound_cap is not None else max(len(p) for p in pairs)
    gen = GenConfig(names, height=cfg.init_height, bound_cap=bound_cap, multisignal=cfg.multisignal)

    sel = np.sort(rng.choice(n_good, size=k, replace=False))
    es = np.sort(rng.choice(n_good, size=k, replace=False))

    def scored(inds: Sequence[Individual]) -> list[Individual]:
        ctx.evaluate([ind.formula for ind in inds])
        return [Individual(ind.formula, ind.pair_id, ctx.fitness(ind.formula, ind.pair_id, sel, es))
                for ind in inds]

    pop: list[Individual] = []
    for pid, size in enumerate(_partition_sizes(cfg.pop_size, len(pairs))):
        pop.extend(Individual(fm.sample_ppstl(rng, gen), pid) for _ in range(size))
    pop = scored(pop)
    targets = [sum(1 for ind in pop if ind.pair_id == pid) for pid in range(len(pairs))]

    best_hv = population_hypervolume(pop)
    best_pop = pop
    history = [best_hv]
    stall = 0
    g = 0
    for g in range(1, cfg.max_gen + 1):
        if g > 1 and (g - 1) % cfg.r_interval == 0:
            sel = np.sort(rng.choice(n_good, size=k, replace=False))
            pop = scored(pop)
        order = rng.permutation(len(pop))
        offspring: list[Individual] = []
        for s in range(0, len(order), 2):
            a = pop[order[s]]
            b = pop[order[s + 1]] if s + 1 < len(order) else pop[order[0]]
            if rng.random() < cfg.cross_prob:
                a, b = crossover(a, b, rng)
            offspring.append(mutate(a, g, cfg, gen, rng))
            if len(offspring) < cfg.pop_size:
                offspring.append(mutate(b, g, cfg, gen, rng))
        offspring = scored(offspring)

        nxt: list[Individual] = []
        for pid in range(len(pairs)):
            part = [ind for ind in pop if ind.pair_id == pid] + [ind for ind in offspring if ind.pair_id == pid]
            nxt.extend(nsga2_select(part, targets[pid]))
        pop = nxt

        hv = population_hypervolume(pop)
        history.append(hv)
        if on_generation is not None:
            on_generation(g, hv)
        if hv > best_hv:
            best_hv, best_pop, stall = hv, pop, 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break

    final = [Individual(ind.formula, ind.pair_id, ctx.fitness(ind.formula, ind.pair_id, sel, es, full=True))
             for ind in best_pop]
    out: list[Learned] = []
    for pid in range(len(pairs)):
        part = [ind for ind in final if ind.pair_id == pid]
        if not part:
            continue
        uniq = list({ind.formula: ind for ind in part}.values())
        hv = [point_hypervolume(ind.fitness.margin, ind.fitness.good_rob_full) for ind in uniq]
        top = [uniq[j] for j in np.argsort(-np.array(hv), kind="stable")[: cfg.k_opt]]
        refined = [refine_constants(ind, ctx, sel, es, cfg.refine_max_iter) for ind in top]
        ok = [ind for ind in refined if passes_gate(ind.fitness, cfg)]
        if ok:
            scores = [point_hypervolume(ind.fitness.margin, ind.fitness.good_rob_full) for ind in ok]
            pick = ok[int(np.argmax(scores))]
            out.append(Learned(pick.formula, pid, pick.fitness))
    return LearnResult(out, g, history)
