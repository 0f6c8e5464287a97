import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from cecflow.broadcast import broadcast_marginals
from cecflow.cost import CostModel, linear
from cecflow.errors import DeadlockError
from cecflow.gp import run_gp
from cecflow.marginal import compute_marginals
from cecflow.model import Application, Instance, NetworkGraph, Strategy, solve_traffic
from cecflow.optimality import build_degenerate_instance
from cecflow.routing import initial_strategy
from cecflow.scenarios import generate, preset

from conftest import SMALL_SEEDS, line_instance, random_strategy, small_instance


def marginals(inst, st):
    fs = solve_traffic(inst, st)
    return fs, compute_marginals(inst, st, fs)


def test_line_recursion():
    p, q, L0 = 2.0, 3.0, 10.0
    inst, st = line_instance(p=p, q=q, L=(L0, 5.0))
    _, ms = marginals(inst, st)
    assert ms.dD_dt[1, 1] == 0.0
    assert ms.dD_dt[0, 1] == pytest.approx(q)
    assert ms.dD_dt[0, 0] == pytest.approx(L0 * p + q)


def test_final_stage_deltas():
    inst = small_instance(1)
    st = initial_strategy(inst)
    fs, ms = marginals(inst, st)
    g = inst.graph
    for s in np.flatnonzero(inst.stage_final):
        assert np.isinf(ms.delta_cpu[s]).all()
        L = inst.stage_L[s]
        expect = (0.0 if L == 0 else L * ms.link_marginal) + ms.dD_dt[s, g.dst]
        assert np.allclose(ms.delta_link[s], expect, rtol=0, atol=1e-12)
        d = inst.apps[inst.stage_app[s]].destination
        assert ms.dD_dt[s, d] == 0.0


def test_row_deltas_view():
    inst, st = line_instance()
    _, ms = marginals(inst, st)
    row = ms.row_deltas(inst, 0, 0)
    assert set(row) == {"cpu", 1} and np.isinf(row["cpu"])


def _instances():
    out = [small_instance(s) for s in SMALL_SEEDS]
    out.append(build_degenerate_instance(0.3)[0])
    out.append(generate(preset("abilene", seed=2)))
    return out


@pytest.mark.parametrize("idx", range(7))
def test_dDdt_equals_phi_weighted_deltas(idx):
    inst = _instances()[idx]
    st = initial_strategy(inst)
    fs, ms = marginals(inst, st)
    with np.errstate(invalid="ignore"):
        acc = np.where(st.phi_cpu > 0, st.phi_cpu * ms.delta_cpu, 0.0)
        link = np.where(st.phi_link > 0, st.phi_link * ms.delta_link, 0.0)
    np.add.at(acc.T, inst.graph.src, link.T)
    rows = ~inst.zero_row
    assert np.allclose(acc[rows], ms.dD_dt[rows], rtol=0, atol=1e-9)


@pytest.mark.parametrize("idx", range(7))
def test_dD_dphi_is_t_times_delta(idx):
    inst = _instances()[idx]
    st = initial_strategy(inst)
    fs, ms = marginals(inst, st)
    tl = fs.t[:, inst.graph.src]
    on = tl > 0
    assert np.allclose(ms.dD_dphi_link[on], (tl * ms.delta_link)[on], rtol=1e-12, atol=1e-9)
    assert (ms.dD_dphi_link[~on] == 0).all()
    fin = (fs.t > 0) & np.isfinite(ms.delta_cpu)
    with np.errstate(invalid="ignore"):
        prod = fs.t * ms.delta_cpu
    assert np.allclose(ms.dD_dphi_cpu[fin], prod[fin], rtol=1e-12, atol=1e-9)


def test_directional_derivative_moves_mass(rng):
    inst = small_instance(3)
    st = initial_strategy(inst)
    tr = run_gp(inst)
    st = tr.strategy
    fs, ms = marginals(inst, st)
    g = inst.graph
    checked = 0
    h = 1e-6
    for s in range(inst.S):
        for i in range(inst.n):
            oe = g.out_edges(i)
            pos = [e for e in oe if st.phi_link[s, e] > 1e-3]
            if fs.t[s, i] <= 0 or not pos or not inst.cpu_ok[s, i]:
                continue
            e = pos[0]
            # shift h from link e to the CPU
            plus = st.copy()
            plus.phi_link[s, e] -= h
            plus.phi_cpu[s, i] += h
            minus = st.copy()
            minus.phi_link[s, e] += h
            minus.phi_cpu[s, i] -= h
            if minus.phi_cpu[s, i] < 0:
                continue
            c = lambda x: inst.costs.total(*(lambda f: (f.F, f.G))(solve_traffic(inst, x)))
            fd = (c(plus) - c(minus)) / (2 * h)
            an = fs.t[s, i] * (ms.delta_cpu[s, i] - ms.delta_link[s, e])
            assert fd == pytest.approx(an, rel=1e-3, abs=1e-7)
            checked += 1
    assert checked > 0


def test_monotone_dDdt_at_fixed_point():
    inst = small_instance(6)
    tr = run_gp(inst)
    st = tr.strategy
    _, ms = marginals(inst, st)
    g = inst.graph
    s_idx, e_idx = np.nonzero(st.phi_link > 1e-9)
    tol = 1e-6
    assert (ms.dD_dt[s_idx, g.dst[e_idx]] <= ms.dD_dt[s_idx, g.src[e_idx]] + tol).all()


# ------------------------------------------------------------- broadcast

def _check_broadcast(inst, st):
    fs, ms = marginals(inst, st)
    bm, log = broadcast_marginals(inst, st, fs)
    for a, b in ((ms.dD_dt, bm.dD_dt), (ms.delta_cpu, bm.delta_cpu), (ms.delta_link, bm.delta_link),
                 (ms.dD_dphi_link, bm.dD_dphi_link), (ms.dD_dphi_cpu, bm.dD_dphi_cpu)):
        fin = np.isfinite(a)
        assert (fin == np.isfinite(b)).all()
        assert np.max(np.abs(a[fin] - b[fin]), initial=0.0) <= 1e-9
    assert log.messages == int((st.phi_link > 0).sum())
    assert log.messages <= inst.S * inst.graph.edge_count
    return log


@pytest.mark.parametrize("idx", range(7))
def test_broadcast_matches_centralised(idx):
    inst = _instances()[idx]
    _check_broadcast(inst, initial_strategy(inst))


@settings(max_examples=30, deadline=None)
@given(seed=hst.integers(0, 10_000), sseed=hst.integers(0, 10_000))
def test_broadcast_matches_on_random_strategies(seed, sseed):
    inst = small_instance(seed % 40)
    st = random_strategy(inst, np.random.default_rng(sseed))
    if st is not None:
        _check_broadcast(inst, st)


def chain(n):
    g = NetworkGraph(n, [(i, i + 1) for i in range(n - 1)])
    costs = CostModel.from_functions([linear(1.0)] * (n - 1), [linear(1.0)] * n)
    app = Application.from_maps(0, 1, n - 1, [1.0, 1.0], {0: 1.0}, n, comp_weight={(n - 1, 0): 1.0})
    inst = Instance(g, [app], costs)
    st = Strategy.zeros(inst)
    for i in range(n - 1):
        st.set_row(inst, 0, i, {i + 1: 1.0})
        st.set_row(inst, 1, i, {i + 1: 1.0})
    st.set_row(inst, 0, n - 1, {"cpu": 1.0})
    return inst, st


def test_line_completion_rounds():
    inst, st = chain(5)
    log = _check_broadcast(inst, st)
    assert log.completion[(0, 1)] == 4
    assert log.completion[(0, 0)] == 4
    assert [r[3] for r in log.rows if r[1] == 1] == [1, 1, 1, 1, 0]


def test_round_log_csv(tmp_path):
    inst, st = chain(3)
    fs = solve_traffic(inst, st)
    _, log = broadcast_marginals(inst, st, fs)
    path = tmp_path / "rounds.csv"
    log.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "app,phase,round,messages"
    assert len(lines) == 1 + len(log.rows)


def test_deadlock_on_loop():
    inst, st = chain(3)
    g = NetworkGraph(3, [(0, 1), (1, 2), (1, 0)])
    costs = CostModel.from_functions([linear(1.0)] * 3, [linear(1.0)] * 3)
    inst = Instance(g, inst.apps, costs)
    st = Strategy.zeros(inst)
    st.set_row(inst, 0, 0, {1: 1.0})
    st.set_row(inst, 0, 1, {0: 0.5, 2: 0.5})
    st.set_row(inst, 0, 2, {"cpu": 1.0})
    st.set_row(inst, 1, 0, {1: 1.0})
    st.set_row(inst, 1, 1, {2: 1.0})
    fs_fake = solve_traffic(inst, Strategy(st.phi_cpu, np.where(np.arange(3) == 2, 0.0, st.phi_link)))
    with pytest.raises(DeadlockError) as exc:
        broadcast_marginals(inst, st, fs_fake)
    assert exc.value.waiting == {0, 1}
