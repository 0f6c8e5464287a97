import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from cecflow.cost import CostModel, linear
from cecflow.errors import LoopError, SaturationError, ValidationError
from cecflow.model import Application, Instance, NetworkGraph, Strategy, solve_traffic, \
    strategy_cost, validate_strategy
from cecflow.optimality import build_degenerate_instance
from cecflow.routing import initial_strategy
from cecflow.scenarios import generate, preset

from conftest import diamond_instance, line_instance, random_strategy, small_instance


def two_node(phi_back=0.0, back_edge=True):
    edges = [(0, 1), (1, 0)] if back_edge else [(0, 1)]
    g = NetworkGraph(2, edges)
    costs = CostModel.from_functions([linear(1.0)] * len(edges), [linear(1.0)] * 2)
    app = Application.from_maps(0, 1, 1, [10.0, 5.0], {0: 1.0}, 2, comp_weight={(1, 0): 1.0})
    inst = Instance(g, [app], costs)
    st = Strategy.zeros(inst)
    st.set_row(inst, 0, 0, {1: 1.0})
    st.set_row(inst, 0, 1, {"cpu": 1.0, **({0: phi_back} if phi_back else {})})
    st.set_row(inst, 1, 0, {1: 1.0})
    return inst, st


class TestGraph:
    def test_rejects_self_loop(self):
        with pytest.raises(ValidationError):
            NetworkGraph(3, [(0, 0)])

    def test_rejects_duplicate(self):
        with pytest.raises(ValidationError):
            NetworkGraph(3, [(0, 1), (0, 1)])

    def test_rejects_unknown_node(self):
        with pytest.raises(ValidationError):
            NetworkGraph(2, [(0, 2)])

    def test_adjacency(self):
        g = NetworkGraph(3, [(0, 1), (0, 2), (2, 1)])
        assert g.out_neighbors(0) == [1, 2]
        assert sorted(g.in_neighbors(1)) == [0, 2]
        assert g.edge_id(2, 1) == 2

    def test_application_validation(self):
        with pytest.raises(ValidationError):
            Application.from_maps(0, 2, 1, [1.0, 1.0], {0: 1.0}, 2)
        with pytest.raises(ValidationError):
            Application.from_maps(0, 1, 1, [1.0, 1.0], {0: -1.0}, 2)


class TestValidate:
    def test_line_valid(self):
        inst, st = two_node()
        rep = validate_strategy(inst, st)
        assert rep.ok and rep.loop_free

    def test_simplex_violation(self):
        inst, st = two_node(phi_back=0.5)
        rep = validate_strategy(inst, st)
        assert not rep.feasible
        assert rep.simplex[0]["node"] == 1 and rep.simplex[0]["stage"] == (0, 0)
        assert rep.simplex[0]["sum"] == pytest.approx(1.5)

    def test_two_cycle_loop(self):
        inst, st = two_node()
        st.set_row(inst, 0, 1, {0: 1.0})
        rep = validate_strategy(inst, st)
        assert rep.loops == [(0, 0)]
        with pytest.raises(LoopError) as exc:
            solve_traffic(inst, st)
        assert exc.value.stage == (0, 0)

    def test_cpu_on_incapable_node(self):
        inst, st = two_node()
        st.set_row(inst, 0, 0, {"cpu": 1.0})
        rep = validate_strategy(inst, st)
        assert rep.cpu and rep.cpu[0]["node"] == 0

    def test_final_stage_destination_row_must_be_zero(self):
        inst, st = two_node()
        st.set_row(inst, 1, 1, {0: 1.0})
        assert validate_strategy(inst, st).simplex


class TestSolveTraffic:
    def test_line_example(self):
        inst, st = line_instance(L=(10.0, 5.0))
        fs = solve_traffic(inst, st)
        assert fs.t[0, 0] == 1.0 and fs.t[0, 1] == 1.0
        assert fs.g[0, 1] == 1.0 and fs.t[1, 1] == 1.0
        assert fs.F[0] == 10.0 and fs.G[1] == 1.0

    def test_zero_input(self):
        inst, st = line_instance(rate=0.0)
        fs = solve_traffic(inst, st)
        for arr in (fs.t, fs.f, fs.g, fs.F, fs.G):
            assert not arr.any()

    def test_diamond(self):
        inst = diamond_instance()
        st = Strategy.zeros(inst)
        st.set_row(inst, 0, 0, {1: 0.5, 2: 0.5})
        st.set_row(inst, 0, 1, {3: 1.0})
        st.set_row(inst, 0, 2, {3: 1.0})
        st.set_row(inst, 0, 3, {"cpu": 1.0})
        for i in range(3):
            st.set_row(inst, 1, i, {inst.graph.out_neighbors(i)[-1]: 1.0})
        fs = solve_traffic(inst, st)
        assert fs.t[0, 1] == 0.5 and fs.t[0, 2] == 0.5 and fs.t[0, 3] == 1.0

    def test_deterministic(self):
        inst = small_instance(3)
        st = initial_strategy(inst)
        a, b = solve_traffic(inst, st), solve_traffic(inst, st)
        for x, y in ((a.t, b.t), (a.f, b.f), (a.F, b.F), (a.G, b.G)):
            assert np.array_equal(x, y)


def conservation_error(inst, st, fs):
    g = inst.graph
    inflow = np.zeros((inst.S, inst.n))
    np.add.at(inflow.T, g.dst, fs.f.T)
    inj = inst.inject.copy()
    has_prev = inst.stage_prev >= 0
    inj[has_prev] = fs.g[inst.stage_prev[has_prev]]
    out = fs.g.copy()
    np.add.at(out.T, g.src, fs.f.T)
    lhs = inflow + inj
    err_in = np.abs(lhs - fs.t)
    err_out = np.where(inst.zero_row, 0.0, np.abs(out - fs.t))
    scale = np.maximum(1.0, np.abs(fs.t))
    return float(max((err_in / scale).max(), (err_out / scale).max()))


@settings(max_examples=40, deadline=None)
@given(seed=hst.integers(0, 10_000), sseed=hst.integers(0, 10_000))
def test_conservation_property(seed, sseed):
    inst = small_instance(seed % 50)
    st = random_strategy(inst, np.random.default_rng(sseed))
    if st is None:
        return
    assert validate_strategy(inst, st).ok
    fs = solve_traffic(inst, st)
    assert conservation_error(inst, st, fs) <= 1e-9
    # f = t * phi, g = t * phi_cpu, aggregates
    assert np.allclose(fs.f, fs.t[:, inst.graph.src] * st.phi_link, rtol=0, atol=1e-12)
    assert np.allclose(fs.g, fs.t * st.phi_cpu, rtol=0, atol=1e-12)
    assert np.allclose(fs.F, inst.stage_L @ fs.f)


@settings(max_examples=20, deadline=None)
@given(seed=hst.integers(0, 10_000))
def test_removing_input_zeroes_stage(seed):
    inst = small_instance(seed % 50)
    st = initial_strategy(inst)
    apps = [inst.apps[0].__class__(a.id, a.chain_len, a.destination, a.packet_size,
                                   np.zeros(inst.n) if ai == 0 else a.input_rate, a.comp_weight)
            for ai, a in enumerate(inst.apps)]
    cut = inst.with_apps(apps)
    fs = solve_traffic(cut, st)
    sl = slice(0, inst.apps[0].chain_len + 1)
    assert not fs.t[sl].any() and not fs.f[sl].any() and not fs.g[sl].any()


class TestInitialStrategy:
    def test_degenerate_picks_cheap_path(self):
        inst, _ = build_degenerate_instance(0.1)
        st = initial_strategy(inst)
        assert st.row(inst, 0, 0) == {1: 1.0}
        assert st.row(inst, 0, 1) == {2: 1.0}
        assert st.row(inst, 0, 2) == {3: 1.0}
        assert st.row(inst, 0, 3) == {"cpu": 1.0}
        assert strategy_cost(inst, st) == pytest.approx(0.1)

    def test_single_node(self):
        g = NetworkGraph(1, [])
        costs = CostModel.from_functions([], [linear(1.0)])
        app = Application.from_maps(0, 2, 0, [1.0, 1.0, 1.0], {0: 1.0}, 1)
        inst = Instance(g, [app], costs)
        st = initial_strategy(inst)
        assert st.phi_cpu[0, 0] == 1.0 and st.phi_cpu[1, 0] == 1.0 and st.phi_cpu[2, 0] == 0.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_connected_er(self, seed):
        inst = generate(preset("connected-er", seed=seed))
        st = initial_strategy(inst)
        assert validate_strategy(inst, st).ok
        assert np.isfinite(strategy_cost(inst, st))

    def test_spreads_load_when_tree_saturates(self):
        # one unit over two parallel capacity-0.8 paths: a single path saturates
        inst = diamond_instance(mu=0.8, cpu_mu=5.0)
        st = initial_strategy(inst)
        assert validate_strategy(inst, st).ok
        assert np.isfinite(strategy_cost(inst, st))
        assert 0 < st.phi_link[0, 0] < 1

    def test_hopeless_instance_raises(self):
        inst = diamond_instance(mu=0.4, cpu_mu=5.0)
        with pytest.raises(SaturationError):
            initial_strategy(inst)
