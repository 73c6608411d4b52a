# test_eqp_parser.py - 语法、错误位置、规范打印的往返
import math

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import closed_programs
from eqp_parser import ParseError, format_ket, parse, parse_process, pretty_print
from process_ast import (ClassicalRecv, ClassicalSend, DeclBlock, Measure, Par, ParShared, Prefix,
                         QuantumRecv, QuantumSend, Restrict, Seq, SendMeasure, Unitary, VType)
from protocol_lib import BUNDLED, PROGRAMS_DIR, bundled_program
from quantum_core import KET_MINUS, KET_PLUS, Ket

Q, I = VType.QUBIT, VType.INTEGER


class TestGrammar:
    def test_teleport_structure(self):
        src = bundled_program('teleport')
        assert [d.name for d in src.defs] == ['BuildEPR', 'Alice', 'Bob', 'QCOM', 'Teleport']
        assert src.main == 'Teleport'
        qcom = src.get('QCOM').body
        assert isinstance(qcom, Restrict) and qcom.channels == {'c'}
        assert isinstance(qcom.body, ParShared) and qcom.body.shared == 'phi'

    def test_teleport_spec(self):
        spec = bundled_program('teleport').spec
        assert [g.name for g in spec.groups] == ['var_Alice', 'var_Bob']
        assert spec.group('var_Alice').decls[2].vtype is I
        assert spec.states == ('phi', 'psi')
        (claim,) = spec.resources
        assert [(a.count, a.unit) for a in claim.lhs] == [(1, 'ebit'), (2, 'cbits')]
        assert (claim.rhs.count, claim.rhs.unit) == (1, 'qubit')

    def test_precedence(self):
        t = parse_process("H[x] . end ; X[x] . end || Z[y] . end", env={'x': Q, 'y': Q})
        assert isinstance(t, Par)
        assert isinstance(t.left, Seq)
        assert isinstance(t.left.first, Prefix)

    def test_restriction_is_postfix(self):
        t = parse_process("g!x . end \\{g}", env={'x': Q})
        assert isinstance(t, Prefix)
        assert isinstance(t.continuation, Restrict)

    def test_send_and_receive_typing(self):
        t = parse_process("(g!x . g!3 . end || g?y . H[y] . g?n . end) \\{g}", env={'x': Q})
        left, right = t.body.left, t.body.right
        assert isinstance(left.action, QuantumSend)
        assert isinstance(left.continuation.action, ClassicalSend)
        assert left.continuation.action.expr == 3
        assert isinstance(right.action, QuantumRecv)
        assert isinstance(right.continuation.continuation.action, ClassicalRecv)

    def test_annotation_overrides_inference(self):
        t = parse_process("g?y:Qubit . end")
        assert isinstance(t.action, QuantumRecv)

    def test_send_measure(self):
        t = parse_process("g!measure[{x} -> p] . end", env={'x': Q, 'p': I})
        assert isinstance(t.action, SendMeasure)
        assert t.action.measure == Measure(('x',), ('p',))

    def test_power_and_phase(self):
        t = parse_process("Z^r[z] . R(-pi/4)[z] . R(2*pi)[z] . R(0.5)[z] . end", env={'z': Q, 'r': I})
        assert t.action == Unitary('Z', ('z',), power='r')
        assert t.continuation.action.phase == pytest.approx(-math.pi / 4)
        assert t.continuation.continuation.action.phase == pytest.approx(2 * math.pi)
        assert t.continuation.continuation.continuation.action.phase == 0.5

    def test_ket_initialisers(self):
        t = parse_process("[a: Qubit = |+>, b: Qubit = |->, c: Qubit = (0.6|0> - 0.8i|1>), n: Integer = 7 . end]")
        a, b, c, n = t.decls
        assert a.init == KET_PLUS and b.init == KET_MINUS
        assert c.init == Ket((0.6, -0.8j))
        assert n.init == 7

    def test_complex_amplitude(self):
        t = parse_process("[a: Qubit = ((0.6 + 0.0i)|0> + 0.8|1>) . end]")
        assert t.decls[0].init == Ket((0.6, 0.8))

    def test_unicode_operators(self):
        src = parse("P ≔ [x: Qubit . g!x . end ∥ g?y:Qubit . end]\nmain P")
        assert isinstance(src.get('P').body.body, Par)

    def test_comments_ignored(self):
        src = parse("-- 注释\nP := end -- 行尾注释\nmain P\n")
        assert src.main == 'P'

    def test_default_decl_has_no_init(self):
        t = parse_process("[x: Qubit . H[x] . end]")
        assert isinstance(t, DeclBlock) and t.decls[0].init is None


class TestErrors:
    def test_truncated_prefix(self):
        with pytest.raises(ParseError) as info:
            parse("P := g?x .")
        err = info.value
        assert err.line == 1
        assert err.column == len("P := g?x .") + 1
        assert err.expected

    def test_position_on_second_line(self):
        with pytest.raises(ParseError) as info:
            parse("P := end\nQ := H[x] . . end")
        assert info.value.line == 2

    def test_bad_character(self):
        with pytest.raises(ParseError) as info:
            parse("P := end $")
        assert info.value.column == len("P := end $")

    def test_unnormalized_ket(self):
        with pytest.raises(ParseError):
            parse("P := [x: Qubit = (0.6|0> + 0.6|1>) . end]")

    def test_type_error_is_reported(self):
        with pytest.raises(ParseError) as info:
            parse("P := [n: Integer . H[n] . end]\nmain P")
        assert 'Integer' in info.value.message

    def test_recursion_rejected(self):
        with pytest.raises(ParseError):
            parse("P := Q[]\nQ := P[]\nmain P")

    def test_natural_required(self):
        with pytest.raises(ParseError):
            parse("P := g!1.5 . end")

    def test_deep_nesting_does_not_crash(self):
        text = "P := " + "(" * 5000 + "end" + ")" * 5000
        try:
            parse(text)
        except ParseError:
            pass

    def test_invalid_utf8_bytes(self):
        with pytest.raises(ParseError):
            parse(b"P := \xff\xfe")


class TestPrettyPrint:
    @pytest.mark.parametrize('name', BUNDLED)
    def test_bundled_round_trip(self, name):
        src = bundled_program(name)
        text = pretty_print(src)
        assert parse(text) == src
        assert pretty_print(parse(text)) == text

    def test_shipped_files_present(self):
        assert sorted(p.stem for p in PROGRAMS_DIR.glob('*.eqp')) == sorted(BUNDLED)

    def test_format_ket(self):
        assert format_ket(KET_PLUS) == '|+>'
        assert format_ket(Ket((0.6, 0.8j))) == '(0.6|0> + 0.8i|1>)'

    @settings(max_examples=500, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(closed_programs())
    def test_generated_round_trip(self, src):
        assert parse(pretty_print(src)) == src


class TestFuzz:
    @settings(max_examples=10000, deadline=None)
    @given(st.text(alphabet=st.sampled_from(list("PQxyzg:=[](){}.;|!?^-><+,*/\\_01 \nHCNOTendilmeasurQubitInteger")),
                   max_size=60))
    def test_random_text_never_crashes(self, text):
        try:
            parse(text)
        except ParseError:
            pass

    @settings(max_examples=300, deadline=None)
    @given(st.data())
    def test_mutated_teleport_never_crashes(self, data):
        text = (PROGRAMS_DIR / 'teleport.eqp').read_text(encoding='utf-8')
        start = data.draw(st.integers(0, len(text) - 1))
        length = data.draw(st.integers(1, 8))
        mutated = text[:start] + text[start + length:]
        try:
            parse(mutated)
        except ParseError:
            pass

    @settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(st.binary(max_size=64 * 1024))
    def test_random_bytes_never_crash(self, data):
        try:
            parse(data)
        except ParseError:
            pass


class TestLargeInput:
    SIZE = 64 * 1024

    def test_many_definitions(self):
        line = "P{} := [x: Qubit . H[x] . end]\n"
        count = self.SIZE // len(line.format(0))
        text = ''.join(line.format(i) for i in range(count)) + "main P0"
        src = parse(text.encode('utf-8'))
        assert len(src.defs) == count
        assert src.main == 'P0'

    def test_long_prefix_chain(self):
        # 很长的前缀链: 要么解析成功, 要么报 ParseError, 不能崩
        step = "H[x] . "
        chain = step * ((self.SIZE - 40) // len(step))
        text = f"P := [x: Qubit . {chain}end]\nmain P"
        assert len(text) <= self.SIZE
        try:
            src = parse(text)
        except ParseError as e:
            assert e.line >= 1
        else:
            assert src.main == 'P'

    def test_deep_parentheses(self):
        depth = (self.SIZE - 40) // 2
        text = "P := " + "(" * depth + "end" + ")" * depth + "\nmain P"
        try:
            parse(text)
        except ParseError:
            pass
