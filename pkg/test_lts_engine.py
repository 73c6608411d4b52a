# test_lts_engine.py - 迁移规则、调度、重放和状态图
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, event, given, settings, strategies as st

from conftest import closed_programs, open_programs
from eqp_parser import parse, parse_process
from lts_engine import (CONTEXT_PRESERVING, Configuration, Context, CRecv, CSend, Deterministic,
                        EngineError, Environment, Exhaustive, LtsEngine, Meas, QRecvFresh, QRecvRef,
                        QSend, RandomPolicy, Status, Tau, Transition, Unit, make_policy,
                        reachable_graph, run, terminal_nodes, trace_to)
from process_ast import VType
from protocol_lib import bundled_program
from quantum_core import (KET_0, KET_1, KET_MINUS, KET_PLUS, density_from_ket, is_valid_density,
                          maximally_mixed, random_density, standard_gate, tensor)
from trace_format import TraceDocument, trace_json

Q, I = VType.QUBIT, VType.INTEGER
TOL = 1e-9


def proj(ket):
    return density_from_ket(ket)


def config(text, qubits=(), rho=None, integers=None):
    env = {q: Q for q in qubits}
    env.update({n: I for n in (integers or {})})
    return Configuration(parse_process(text, env=env), Context.build(qubits, rho, integers))


class TestQuantumCommunication:
    """按名字传递量子比特: 通信本身不碰 ρ"""

    def test_single_tau_with_identical_context(self):
        cfg = config("(g?y:Qubit . end || g!x . end) \\{g}", ['x'], proj(KET_PLUS))
        graph = reachable_graph(cfg, depth=8, defs={})
        assert graph.number_of_nodes() == 2
        assert graph.number_of_edges() == 1
        (u, v, data), = graph.edges(data=True)
        assert data['label'] == Tau('Q-COM', 'g', 'x')
        after = graph.nodes[v]['config']
        assert after.ctx == cfg.ctx
        assert graph.nodes[v]['status'] == Status.TERMINATED.value

    def test_bundled_program(self):
        trace = run(bundled_program('qubit_pass'))
        assert trace.status is Status.TERMINATED
        assert [lab.rule for lab in trace.labels] == ['DECL', 'Q-COM']
        before, after = trace.configurations[1:]
        assert before.ctx == after.ctx

    def test_hadamard_after_receive(self, rng):
        other = random_density(rng)
        cfg = config("(g?y . H[y] . end || g!x . end) \\{g}", ['x', 'w'], tensor(proj(KET_1), other))
        trace = LtsEngine(defs={}).run(Deterministic(), start=cfg)
        assert trace.labels == [Tau('Q-COM', 'g', 'x'), Unit('H', ('x',))]
        ctx = trace.final.ctx
        assert ctx.reduced(['x']).allclose(proj(KET_MINUS), TOL)
        assert ctx.reduced(['w']).allclose(other, TOL)

    def test_cnot_after_receive_entangles(self, rng):
        other = random_density(rng)
        rho = tensor(tensor(proj(KET_MINUS), proj(KET_1)), other)
        cfg = config("(g?y . CNOT[y, z] . end || g!x . end) \\{g}", ['x', 'z', 'w'], rho)
        trace = LtsEngine(defs={}).run(Deterministic(), start=cfg)
        assert trace.status is Status.TERMINATED
        ctx = trace.final.ctx

        v = np.kron(KET_MINUS.vector, KET_1.vector)
        w = standard_gate('CNOT').matrix @ v
        expected = np.outer(w, w.conj())
        xz = ctx.reduced(['x', 'z'])
        assert np.allclose(xz.matrix, expected, atol=TOL)
        assert ctx.reduced(['x']).allclose(maximally_mixed(1), TOL)
        assert ctx.reduced(['z']).allclose(maximally_mixed(1), TOL)
        assert ctx.reduced(['w']).allclose(other, TOL)

    def test_reduced_respects_name_order(self):
        ctx = Context.build(['a', 'b'], tensor(proj(KET_0), proj(KET_1)))
        assert ctx.reduced(['b', 'a']).allclose(tensor(proj(KET_1), proj(KET_0)))


class TestRules:
    def test_classical_communication(self):
        trace = run(parse("P := [n: Integer . (c!3 . end || c?n . end) \\{c}]\nmain P"))
        assert Tau('C-COM', 'c', 3) in trace.labels
        assert trace.final.ctx.f == {'n_1': 3}

    def test_receive_does_not_overwrite_sibling_variable(self):
        src = parse("P := [r: Integer = 5 . (c!1 . d!r . end || c?r . e!r . end) \\{c}]\nmain P")
        trace = run(src)
        assert trace.status is Status.TERMINATED
        assert CSend('d', 5) in trace.labels
        assert CSend('e', 1) in trace.labels
        assert trace.final.ctx.f == {'r': 5, 'r_1': 1}

    def test_receive_binds_new_integer(self):
        trace = run(parse("P := (c!7 . end || c?k . c!k . end) \\{c}\nmain P"))
        assert trace.status is Status.DEADLOCKED
        assert trace.final.ctx.f == {'k': 7}

    def test_sequential_composition(self):
        trace = run(parse("P := [x: Qubit . H[x] . end ; X[x] . end]\nmain P"))
        rules = [str(lab) for lab in trace.labels]
        assert rules == ['τ[DECL x]', 'H[x]', 'τ[SEQ]', 'X[x]']

    def test_declaration_shadowing_renames(self):
        trace = run(parse("P := [x: Qubit = |1> . [x: Qubit . H[x] . end]]\nmain P"))
        ctx = trace.final.ctx
        assert ctx.qreg == ('x', 'x_1')
        assert trace.labels[1] == Tau('DECL', detail='x_1')
        assert ctx.reduced(['x']).allclose(proj(KET_1))
        assert ctx.reduced(['x_1']).allclose(proj(KET_PLUS))

    def test_call_unfolds_definition(self):
        trace = run(bundled_program('buildepr'))
        assert [str(lab) for lab in trace.labels] == ['τ[DECL a, b]', 'τ[CALL BuildEPR]', 'H[a]', 'CNOT[a,b]']

    def test_classical_power(self):
        src = parse("P := [x: Qubit, r: Integer = 3 . X^r[x] . end]\nmain P")
        trace = run(src)
        assert trace.labels[-1] == Unit('X', ('x',), power=3)
        assert trace.final.ctx.reduced(['x']).allclose(proj(KET_1))

    def test_phase_gate(self):
        trace = run(parse("P := [x: Qubit = |+> . R(pi)[x] . end]\nmain P"))
        assert trace.final.ctx.reduced(['x']).allclose(proj(KET_MINUS))

    def test_measurement_writes_result(self):
        trace = run(parse("P := [x: Qubit = |1>, p: Integer . measure[{x} -> p] . end]\nmain P"))
        assert trace.labels[-1] == Meas(('x',), (1,), 1.0)
        assert trace.final.ctx.f == {'p': 1}

    def test_send_measure_desugars(self):
        src = parse("P := [x: Qubit = |1>, p: Integer, q: Integer . (g!measure[{x} -> p] . end || g?q . end) \\{g}]\nmain P")
        trace = run(src)
        assert trace.status is Status.TERMINATED
        assert trace.final.ctx.f == {'p': 1, 'q_1': 1}

    def test_open_quantum_output(self):
        trace = run(parse("P := [x: Qubit . g!x . end]\nmain P"))
        assert trace.labels[-1] == QSend('g', 'x')
        assert trace.status is Status.TERMINATED

    def test_environment_classical_input(self):
        env = Environment(classical={'c': (5,)})
        trace = run(parse("P := [n: Integer . c?n . end]\nmain P"), environment=env)
        assert trace.labels[-1] == CRecv('c', 5)
        assert trace.final.ctx.f == {'n_1': 5}

    def test_fresh_qubit_doubles_dimension(self):
        env = Environment(quantum={'g': (proj(KET_PLUS),)})
        cfg = config("g?y:Qubit . H[y] . end", ['x'])
        (t,) = LtsEngine(defs={}, environment=env).enabled_transitions(cfg)
        assert isinstance(t.label, QRecvFresh)
        assert t.target.ctx.rho.dim == 2 * cfg.ctx.rho.dim
        assert t.target.ctx.reduced(['y']).allclose(proj(KET_PLUS))

    def test_fresh_qubit_name_clash(self):
        env = Environment(quantum={'g': (proj(KET_1),)})
        cfg = config("g?x:Qubit . H[x] . end", ['x'])
        (t,) = LtsEngine(defs={}, environment=env).enabled_transitions(cfg)
        assert t.label.qvar != 'x'
        assert t.target.ctx.qreg == ('x', t.label.qvar)

    def test_reference_input_keeps_context(self):
        env = Environment(references={'r': ('x',)})
        cfg = config("r?v:Qubit . H[v] . end", ['x'], proj(KET_0))
        engine = LtsEngine(defs={}, environment=env)
        (t,) = engine.enabled_transitions(cfg)
        assert t.label == QRecvRef('r', 'x')
        assert t.target.ctx == cfg.ctx
        trace = engine.run(Deterministic(), start=cfg)
        assert trace.labels[-1] == Unit('H', ('x',))
        assert trace.final.ctx.reduced(['x']).allclose(proj(KET_PLUS), TOL)

    def test_reference_outside_register_rejected(self):
        env = Environment(references={'r': ('ghost',)})
        cfg = config("r?v:Qubit . H[v] . end", ['x'])
        assert LtsEngine(defs={}, environment=env).enabled_transitions(cfg) == []

    def test_reference_to_receiver_itself_rejected(self):
        env = Environment(references={'r': ('x', 'w')})
        cfg = config("r?x:Qubit . H[x] . end", ['x', 'w'])
        labels = [t.label for t in LtsEngine(defs={}, environment=env).enabled_transitions(cfg)]
        assert labels == [QRecvRef('r', 'w')]

    def test_quantum_input_without_environment_has_no_moves(self):
        # 没有候选态时不会凭空产生任意 σ 的输入
        cfg = config("g?y:Qubit . H[y] . end", ['x'])
        engine = LtsEngine(defs={})
        assert engine.enabled_transitions(cfg) == []
        assert engine.step(cfg, Deterministic()) is Status.DEADLOCKED

    def test_environment_validates_values(self):
        with pytest.raises(ValueError):
            Environment(classical={'c': (-1,)})
        with pytest.raises(ValueError):
            Environment(quantum={'g': (maximally_mixed(2),)})


class TestRunStatus:
    def test_nil_deadlocks(self):
        assert run(parse("P := nil\nmain P")).status is Status.DEADLOCKED

    def test_unmatched_input_deadlocks(self):
        assert run(parse("P := [n: Integer . c?n . end]\nmain P")).status is Status.DEADLOCKED

    def test_budget(self):
        trace = run(parse("P := [x: Qubit . H[x] . H[x] . H[x] . end]\nmain P"), max_steps=2)
        assert trace.status is Status.BUDGET
        assert len(trace.steps) == 2

    def test_exhaustive_bound_caps_run(self):
        trace = run(parse("P := [x: Qubit . H[x] . H[x] . H[x] . end]\nmain P"), policy=Exhaustive(1))
        assert trace.status is Status.BUDGET
        assert len(trace.steps) == 1

    def test_engine_error_carries_partial_trace(self):
        with pytest.raises(EngineError) as info:
            run(parse("P := [n: Integer . c!n . end]\nmain P"))
        err = info.value
        assert err.rule == 'C-OUT'
        assert err.variable == 'n'
        assert err.partial_trace.status is Status.ERROR
        assert len(err.partial_trace.steps) == 1

    def test_main_with_params_rejected(self):
        with pytest.raises(EngineError):
            LtsEngine(parse("P(x: Qubit) := H[x] . end\nmain P")).initial_configuration()

    def test_invalid_context_rejected(self):
        with pytest.raises(EngineError):
            Context.build(['x'], maximally_mixed(2))

    def test_policies(self):
        assert isinstance(make_policy('det'), Deterministic)
        assert make_policy('random', 3) == RandomPolicy(3)
        with pytest.raises(ValueError):
            make_policy('fifo')
        with pytest.raises(ValueError):
            Exhaustive(0)

    def test_step_reports_termination(self):
        engine = LtsEngine(defs={})
        assert engine.step(config("end"), Deterministic()) is Status.TERMINATED
        assert engine.step(config("nil"), Deterministic()) is Status.DEADLOCKED
        assert isinstance(engine.step(config("H[x] . end", ['x']), Deterministic()), Transition)


class TestMeasurementStatistics:
    def test_born_frequencies(self):
        engine = LtsEngine(defs={})
        start = config("H[x] . measure[{x} -> p] . end", ['x'], integers={'p': None})
        after_h = engine.step(start, Deterministic()).target
        rng = np.random.default_rng(0)
        zeros = sum(engine.step(after_h, RandomPolicy(), rng).label.outcome == (0,) for _ in range(10000))
        assert 0.48 <= zeros / 10000 <= 0.52

    def test_random_policy_needs_generator(self):
        with pytest.raises(ValueError):
            LtsEngine(defs={}).step(config("H[x] . end", ['x']), RandomPolicy())

    def test_graph_branch_probabilities(self):
        src = parse("P := [x: Qubit = |+>, p: Integer . measure[{x} -> p] . end]\nmain P")
        graph = reachable_graph(src)
        ends = terminal_nodes(graph)
        assert len(ends) == 2
        probabilities = sorted(trace_to(graph, k)[1] for k in ends)
        assert probabilities == pytest.approx([0.5, 0.5])
        stores = sorted(trace_to(graph, k)[0].final.ctx.f['p'] for k in ends)
        assert stores == [0, 1]

    def test_graph_depth_limit(self):
        graph = reachable_graph(parse("P := [x: Qubit . H[x] . H[x] . end]\nmain P"), depth=1)
        assert graph.graph['depth_limited']
        assert not terminal_nodes(graph)


class TestReplay:
    def test_same_seed_same_json(self):
        src = bundled_program('teleport')
        a = trace_json(run(src, RandomPolicy(), seed=11))
        b = trace_json(run(src, RandomPolicy(), seed=11))
        assert a == b
        TraceDocument.model_validate_json(a)

    def test_replay_reproduces_trace(self):
        src = bundled_program('teleport')
        engine = LtsEngine(src)
        trace = engine.run(RandomPolicy(), seed=4)
        assert engine.replay(trace) == trace

    def test_replay_rejects_tampered_trace(self):
        src = bundled_program('buildepr')
        engine = LtsEngine(src)
        trace = engine.run()
        bad = replace(trace.steps[2], label=Unit('X', ('a',)))
        tampered = replace(trace, steps=trace.steps[:2] + (bad,) + trace.steps[3:])
        with pytest.raises(EngineError):
            engine.replay(tampered)


RULE_OF_LABEL = {CSend: 'C-OUT', CRecv: 'C-IN', QSend: 'Q-OUT', QRecvFresh: 'Q-IN1',
                 QRecvRef: 'Q-IN2', Unit: 'U-APP', Meas: 'MEAS'}
ALL_RULES = {'DECL', 'CALL', 'SEQ', 'C-COM', 'Q-COM', *RULE_OF_LABEL.values()}


def rule_of(label):
    return label.rule if isinstance(label, Tau) else RULE_OF_LABEL[type(label)]


def assert_steps_preserve_context(trace):
    for before, step in zip(trace.configurations, trace.steps):
        after, label = step.target, step.label
        assert is_valid_density(after.ctx.rho.matrix)
        assert not after.ctx.violations()
        rule = rule_of(label)
        if isinstance(label, CONTEXT_PRESERVING) or rule in ('Q-COM', 'CALL', 'SEQ', 'C-COM'):
            assert after.ctx.rho == before.ctx.rho
        if isinstance(label, CONTEXT_PRESERVING) or rule in ('Q-COM', 'CALL', 'SEQ'):
            assert after.ctx.qreg == before.ctx.qreg
        if isinstance(label, (Unit, Meas)):
            assert after.ctx.qreg == before.ctx.qreg
        if isinstance(label, QRecvFresh):
            assert after.ctx.rho.dim == 2 * before.ctx.rho.dim
        event(rule)


class TestRuleConservation:
    """随机程序上的每一步都满足上下文不变式"""

    @settings(max_examples=1000, deadline=None,
              suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
    @given(closed_programs(), st.integers(0, 2 ** 32 - 1))
    def test_every_step_preserves_invariants(self, src, seed):
        engine = LtsEngine(src)
        trace = engine.run(RandomPolicy(), max_steps=200, seed=seed)
        assert trace.status is Status.TERMINATED
        assert_steps_preserve_context(trace)
        assert engine.replay(trace) == trace

    @settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(open_programs(), st.integers(0, 2 ** 32 - 1))
    def test_open_programs_preserve_invariants(self, case, seed):
        src, env = case
        engine = LtsEngine(src, environment=env)
        trace = engine.run(RandomPolicy(), max_steps=200, seed=seed)
        assert trace.status is Status.TERMINATED
        assert_steps_preserve_context(trace)
        assert engine.replay(trace) == trace

    def test_generators_reach_every_rule(self):
        seen = set()

        @settings(max_examples=200, deadline=None, derandomize=True, database=None,
                  suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
        @given(st.one_of(closed_programs().map(lambda src: (src, Environment())), open_programs()),
               st.integers(0, 2 ** 32 - 1))
        def collect(case, seed):
            src, env = case
            trace = LtsEngine(src, environment=env).run(RandomPolicy(), max_steps=200, seed=seed)
            seen.update(rule_of(label) for label in trace.labels)

        collect()
        assert seen == ALL_RULES
