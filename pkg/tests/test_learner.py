import numpy as np
import pytest

from ppstl import formula as fm
from ppstl.learner import (EAConfig, FitnessContext, FitnessRecord, Individual, crossover, crowding_distance,
                           hypervolume_2d, learn_formulas, mutate, mutation_rate, nondominated_sort, nsga2_select,
                           passes_gate, refine_constants, score_vector, trace_margins)
from ppstl.parser import parse
from ppstl.synth import synth_generate
from ppstl.trace import AugmentedPair, Trace, augment, derived_rng

from helpers import past_config

X = ("x",)


def test_score_vector_example():
    s = score_vector([-0.5, -0.2, 0.3])
    assert np.allclose(s, [-0.462, -0.197, 0.197, -0.291], atol=1e-3)
    assert int(np.argmax(s)) == 2


def test_score_vector_never_firing_and_immediate_firing():
    assert score_vector([-1.0] * 5).max() < 0
    assert score_vector([1.0, -1.0, -1.0])[0] < 0
    with pytest.raises(ValueError):
        score_vector([])


def test_score_vector_range():
    rng = np.random.default_rng(0)
    for _ in range(200):
        rob = rng.normal(scale=3, size=int(rng.integers(1, 30)))
        s = score_vector(rob)
        assert len(s) == len(rob) + 1
        assert (np.abs(s) <= 1).all()


def test_trace_margins_match_score_vector():
    rng = np.random.default_rng(1)
    lengths = rng.integers(1, 12, size=7)
    L = int(lengths.max())
    values = np.full((3, 7, L), -np.inf)
    for q in range(3):
        for k in range(7):
            values[q, k, : lengths[k]] = rng.normal(size=lengths[k])
    got = trace_margins(values, lengths)
    for q in range(3):
        for k in range(7):
            assert got[q, k] == score_vector(values[q, k, : lengths[k]]).max()


def _ctx(fail_values, good_values):
    pair = AugmentedPair(Trace("f", np.asarray(fail_values, float), True))
    goods = [Trace(f"g{k}", np.asarray(v, float)) for k, v in enumerate(good_values)]
    return FitnessContext([pair], goods, X)


def test_fitness_example():
    ctx = _ctx([-0.5, -0.2, 0.3], [[-1.0, -2.0]])
    idx = np.arange(1)
    rec = ctx.fitness(parse("x >= 0"), 0, idx, idx, full=True)
    assert rec.margin == pytest.approx(0.197, abs=1e-3)
    assert rec.ok_orig and rec.acc == 1.0
    assert rec.far == 0.0 and rec.good_rob_full == -1.0


def test_fitness_always_true_detector():
    ctx = _ctx([-0.5, -0.2, 0.3], [[-1.0], [0.5]])
    idx = np.arange(2)
    rec = ctx.fitness(parse("TRUE"), 0, idx, idx, full=True)
    assert not rec.ok_orig and rec.far == 1.0 and rec.acc == 0.0


def test_fitness_over_augmentations():
    t = Trace("f", [[-0.5], [-0.2], [0.3]], True)
    aug = (t.with_values([[0.1], [0.2], [0.3]], id="a0"), t.with_values([[-0.1], [-0.1], [-0.1]], id="a1"))
    ctx = FitnessContext([AugmentedPair(t, aug)], [Trace("g", [[-1.0]])], X)
    rec = ctx.fitness(parse("x >= 0"), 0, np.arange(1), np.arange(1))
    assert rec.acc == pytest.approx(1 / 3)
    assert rec.ok_orig
    assert rec.margin == min(score_vector(v).max() for v in ([-0.5, -0.2, 0.3], [0.1, 0.2, 0.3], [-0.1] * 3))


def test_fitness_needs_good_traces():
    with pytest.raises(ValueError):
        FitnessContext([AugmentedPair(Trace("f", [0.0], True))], [], X)


def test_fitness_is_cached():
    ctx = _ctx([-0.5, -0.2, 0.3], [[-1.0]])
    idx = np.arange(1)
    f = parse("x >= 0")
    ctx.evaluate([f, f, parse("x >= 1")])
    calls = ctx.engine_calls
    ctx.fitness(f, 0, idx, idx, full=True)
    assert ctx.engine_calls == calls == 1


# hypervolume

@pytest.mark.parametrize("points,area", [
    ([], 0.0),
    ([(0.0, 0.0)], 1.0),
    ([(1.0, -1.0)], 4.0),
    ([(5.0, -np.inf)], 4.0),
    ([(-1.0, -1.0)], 0.0),
    ([(0.0, 0.0), (0.5, 0.5)], 1.25),
    ([(0.0, 0.0), (-0.5, 0.5)], 1.0),
    ([(0.5, 0.0), (0.0, -0.5)], 2.0),
])
def test_hypervolume_rectangles(points, area):
    assert hypervolume_2d(points) == area


def _mc_hypervolume(points, rng, n=1_000_000):
    pts = np.clip(np.asarray(points, float), -1, 1)
    u = rng.uniform(-1, 1, size=(n, 2))
    dominated = np.zeros(n, dtype=bool)
    for m, g in pts:
        dominated |= (u[:, 0] <= m) & (u[:, 1] >= g)
    return 4.0 * dominated.mean()


def test_hypervolume_matches_monte_carlo():
    rng = np.random.default_rng(2)
    for _ in range(10):
        pts = rng.uniform(-1.2, 1.2, size=(int(rng.integers(1, 15)), 2))
        assert abs(hypervolume_2d(pts) - _mc_hypervolume(pts, rng)) <= 1e-2


def test_hypervolume_monotone():
    rng = np.random.default_rng(3)
    for _ in range(200):
        pts = rng.uniform(-1, 1, size=(6, 2))
        extra = rng.uniform(-1, 1, size=(1, 2))
        assert hypervolume_2d(np.vstack([pts, extra])) >= hypervolume_2d(pts)


# selection

def _brute_fronts(obj):
    n = len(obj)
    remaining = set(range(n))
    fronts = []
    while remaining:
        front = sorted(i for i in remaining
                       if not any((obj[j] <= obj[i]).all() and (obj[j] < obj[i]).any() for j in remaining))
        fronts.append(front)
        remaining -= set(front)
    return fronts


def test_nondominated_sort_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(100):
        obj = rng.integers(0, 5, size=(int(rng.integers(1, 25)), 2)).astype(float)
        assert [f.tolist() for f in nondominated_sort(obj)] == _brute_fronts(obj)


def test_crowding_distance_boundaries_infinite():
    obj = np.array([[0.0, 3.0], [1.0, 2.0], [2.0, 1.0], [3.0, 0.0]])
    d = crowding_distance(obj)
    assert d[0] == d[3] == np.inf
    assert d[1] == d[2] == pytest.approx(4 / 3)


def _ind(margin, good_rob, k=0):
    return Individual(parse(f"x >= {k}"), 0, FitnessRecord(margin, True, 1.0, good_rob, good_rob))


def test_nsga2_select_keeps_best_fronts():
    part = [_ind(0.5, -0.5, 0), _ind(0.1, 0.1, 1), _ind(0.4, -0.6, 2), _ind(-0.2, 0.5, 3), _ind(0.6, 0.0, 4)]
    kept = nsga2_select(part, 3)
    assert {ind.formula for ind in kept} == {part[0].formula, part[2].formula, part[4].formula}
    assert nsga2_select(part, 0) == []
    with pytest.raises(ValueError):
        nsga2_select(part, 6)


def test_nsga2_select_never_drops_dominating_point():
    rng = np.random.default_rng(5)
    for _ in range(50):
        part = [_ind(*rng.uniform(-1, 1, size=2), k) for k in range(20)]
        kept = nsga2_select(part, 10)
        assert len(kept) == 10
        obj = np.array([(-i.fitness.margin, i.fitness.good_rob_sel) for i in part])
        first = nondominated_sort(obj)[0]
        if len(first) <= 10:
            assert {part[i].formula for i in first} <= {i.formula for i in kept}


# variation

def test_crossover_respects_height_limit():
    rng = np.random.default_rng(6)
    cfg = past_config(["a", "b"], height=(1, 12))
    pool = [fm.sample_ppstl(rng, cfg) for _ in range(200)]
    for _ in range(10_000):
        a = Individual(pool[int(rng.integers(200))], 0)
        b = Individual(pool[int(rng.integers(200))], 1)
        for child in crossover(a, b, rng):
            assert child.formula.height <= fm.MAX_HEIGHT


def test_crossover_modes_on_atoms():
    a = Individual(parse("x >= 1"), 0)
    b = Individual(parse("x >= 2"), 1)
    kinds = set()
    for seed in range(40):
        c1, c2 = crossover(a, b, np.random.default_rng(seed))
        if c1.formula == b.formula and c1.pair_id == 0:
            kinds.add("subtree")
            assert c2.formula == a.formula and c2.pair_id == 1
        else:
            kinds.add("pair")
            assert (c1.formula, c1.pair_id, c2.formula, c2.pair_id) == (a.formula, 1, b.formula, 0)
    assert kinds == {"subtree", "pair"}


def test_mutation_rate_decay():
    assert mutation_rate(0.3, 1) == 0.3
    assert mutation_rate(0.3, 8) == pytest.approx(0.15)
    with pytest.raises(ValueError):
        mutation_rate(0.3, 0)


def test_mutation_edits_of_yesterday():
    cfg = EAConfig(mut_prob=1.0)
    gen = past_config(["x"])
    p = parse("x >= 0.5")
    ind = Individual(parse("Y(x >= 0.5)"), 3)
    seen = set()
    rng = np.random.default_rng(7)
    for _ in range(300):
        out = mutate(ind, 1, cfg, gen, rng)
        assert out.pair_id == 3
        f = out.formula
        if f == p:
            seen.add("shrink")
        elif f.op == fm.YESTERDAY:
            assert f.args[0].op == fm.ATOM
            seen.add("jitter")
        else:
            assert f.op in fm.UNARY and f.args[0] == p
            seen.add("replace")
    assert seen == {"shrink", "jitter", "replace"}


def test_mutation_rate_zero_is_identity():
    ind = Individual(parse("O(x >= 0.5)"), 0)
    rng = np.random.default_rng(8)
    assert all(mutate(ind, 1, EAConfig(mut_prob=0.0), past_config(["x"]), rng) is ind for _ in range(50))


# constant refinement

STEP_FAIL = [0.1] * 10 + [0.9] * 10


def _grid_best(good_max):
    best_c, best_m = None, -np.inf
    rob0 = np.array(STEP_FAIL)
    for c in np.linspace(0, 1, 1001):
        if good_max - c >= 0:
            continue
        # smaller of failure margin and good-trace clearance
        m = min(score_vector(rob0 - c).max(), np.tanh(c - good_max))
        if m > best_m:
            best_c, best_m = c, m
    return best_c


@pytest.mark.parametrize("good_max,start", [(0.3, 0.35), (0.6, 0.8), (0.3, 0.75)])
def test_refinement_matches_grid_search(good_max, start):
    ctx = _ctx(STEP_FAIL, [[0.0, good_max], [good_max / 2]])
    idx = np.arange(2)
    ind = Individual(parse(f"x >= {start}"), 0)
    out = refine_constants(ind, ctx, idx, idx, max_iter=50)
    c = fm.thresholds(out.formula)[0]
    assert abs(c - _grid_best(good_max)) <= 0.05
    assert out.fitness.good_rob_full < 0


def test_refinement_never_worsens():
    ctx = _ctx(STEP_FAIL, [[0.3]])
    idx = np.arange(1)
    ind = Individual(parse("x >= 0.5"), 0)
    base = ctx.fitness(ind.formula, 0, idx, idx, full=True)
    out = refine_constants(ind, ctx, idx, idx)

    def objective(rec):
        return min(rec.margin, -np.tanh(rec.good_rob_full))

    assert objective(out.fitness) >= objective(base)


def test_gate():
    cfg = EAConfig()
    good = FitnessRecord(0.1, True, 0.8, -0.1, -0.1, far=0.0, good_rob_full=-0.1)
    assert passes_gate(good, cfg)
    assert not passes_gate(FitnessRecord(0.1, False, 0.8, -0.1, -0.1, 0.0, -0.1), cfg)
    assert not passes_gate(FitnessRecord(0.1, True, 0.7, -0.1, -0.1, 0.0, -0.1), cfg)
    assert not passes_gate(FitnessRecord(0.1, True, 0.8, -0.1, -0.1, 0.01, -0.1), cfg)
    assert not passes_gate(FitnessRecord(0.1, True, 0.8, -0.1, -0.1), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        EAConfig(mut_prob=1.5)
    with pytest.raises(ValueError):
        EAConfig(k_opt=0)


# learning loop

PLANTED = parse("O(x0 >= 0.85 & x1 >= 0.7)")
NAMES = ("x0", "x1")


@pytest.fixture(scope="module")
def planted_batch():
    d = synth_generate(PLANTED, 15, 3, 40, np.random.default_rng(0), names=NAMES)
    pairs = [AugmentedPair(t, augment(t, 2, 0.01, derived_rng(0, t.id))) for t in d.failures]
    return pairs, d.good


def test_learn_formulas_is_deterministic(planted_batch):
    pairs, good = planted_batch
    cfg = EAConfig(pop_size=40, max_gen=8, patience=5)
    a = learn_formulas(pairs, good, NAMES, cfg, np.random.default_rng(3))
    b = learn_formulas(pairs, good, NAMES, cfg, np.random.default_rng(3))
    assert [(x.formula, x.pair_id, x.fitness) for x in a.formulas] == \
        [(x.formula, x.pair_id, x.fitness) for x in b.formulas]
    assert a.hv_history == b.hv_history


def test_learn_formulas_outputs_pass_gate(planted_batch):
    pairs, good = planted_batch
    cfg = EAConfig(pop_size=120, max_gen=40, patience=20)
    res = learn_formulas(pairs, good, NAMES, cfg, np.random.default_rng(0))
    assert 1 <= len(res.formulas) <= len(pairs)
    assert len({x.pair_id for x in res.formulas}) == len(res.formulas)
    for x in res.formulas:
        assert fm.is_pure_past(x.formula)
        assert passes_gate(x.fitness, cfg)
    assert res.generations <= cfg.max_gen
    assert len(res.hv_history) == res.generations + 1


def test_unreachable_accuracy_gives_no_formulas(planted_batch):
    pairs, good = planted_batch
    res = learn_formulas(pairs, good, NAMES, EAConfig(pop_size=30, max_gen=3, min_acc=1.1),
                         np.random.default_rng(0))
    assert res.formulas == []


def test_patience_stops_early(planted_batch):
    pairs, good = planted_batch
    res = learn_formulas(pairs, good, NAMES, EAConfig(pop_size=20, max_gen=200, patience=1),
                         np.random.default_rng(0))
    assert res.generations < 200


def test_empty_batch():
    res = learn_formulas([], [Trace("g", [0.0, 0.0])], ("x0", "x1"), EAConfig(), np.random.default_rng(0))
    assert res.formulas == [] and res.generations == 0
