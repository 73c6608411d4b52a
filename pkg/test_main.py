# test_main.py - 命令行退出码与输出
import json

import numpy as np
import pytest

from main import (EXIT_BUDGET, EXIT_DEADLOCK, EXIT_ENGINE, EXIT_INVALID, EXIT_IO, EXIT_OK,
                  EXIT_TELEPORT, main)
from protocol_lib import PROGRAMS_DIR, bundled_program
from eqp_parser import pretty_print
from trace_format import TeleportCheckDocument, TraceDocument


@pytest.fixture(autouse=True)
def plain_env(monkeypatch):
    monkeypatch.setenv('EQPALG_COLOR', '0')
    monkeypatch.delenv('EQPALG_TRACE_LOG', raising=False)
    monkeypatch.delenv('EQPALG_SEED', raising=False)


def bundled(name):
    return str(PROGRAMS_DIR / f"{name}.eqp")


class TestParse:
    def test_teleport_ok(self, capsys):
        assert main(['parse', bundled('teleport'), '--format', 'json']) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc['main'] == 'Teleport'
        assert doc['spec'] is True
        assert {'Alice', 'Bob', 'BuildEPR', 'Teleport'} <= {d['name'] for d in doc['defs']}

    def test_human_summary(self, capsys):
        assert main(['parse', bundled('buildepr')]) == EXIT_OK
        assert 'BuildEPR' in capsys.readouterr().out

    def test_truncated_prefix_is_invalid(self, write_eqp, capsys):
        path = write_eqp("P := g?x .\nmain P")
        assert main(['parse', str(path)]) == EXIT_INVALID
        err = capsys.readouterr().err
        assert f"{path}:1:" in err

    def test_missing_file(self, tmp_path):
        assert main(['parse', str(tmp_path / 'nope.eqp')]) == EXIT_IO


class TestRun:
    def test_remote_hadamard_json(self, capsys):
        assert main(['run', bundled('remote_hadamard'), '--format', 'json']) == EXIT_OK
        doc = TraceDocument.model_validate_json(capsys.readouterr().out)
        assert doc.final == 'terminated'
        hadamard = [s for s in doc.steps if s.label == 'unit' and s.gate == 'H']
        assert len(hadamard) == 1
        assert hadamard[0].targets == ['x']
        assert doc.register == ['x', 'w']

        minus = np.array([1, -1]) / np.sqrt(2)
        w = np.array([0.6, 0.8j])
        expected = np.kron(np.outer(minus, minus.conj()), np.outer(w, w.conj()))
        got = np.array([[complex(re, im) for re, im in row] for row in doc.steps[-1].rho_digest])
        assert np.allclose(got, expected, atol=1e-9)

    def test_same_seed_same_bytes(self, capsys):
        argv = ['run', bundled('teleport'), '--policy', 'random', '--seed', '7', '--format', 'json']
        assert main(argv) == EXIT_OK
        first = capsys.readouterr().out
        assert main(argv) == EXIT_OK
        assert capsys.readouterr().out == first

    def test_nil_deadlocks(self, write_eqp):
        assert main(['run', str(write_eqp("P := nil\nmain P"))]) == EXIT_DEADLOCK

    def test_budget(self, write_eqp):
        path = write_eqp("P := [x: Qubit . H[x] . H[x] . H[x] . end]\nmain P")
        assert main(['run', str(path), '--max-steps', '2']) == EXIT_BUDGET

    def test_non_positive_budget_rejected(self, write_eqp):
        path = write_eqp("P := [x: Qubit . H[x] . end]\nmain P")
        assert main(['run', str(path), '--max-steps', '0']) == EXIT_INVALID

    def test_engine_error_prints_partial_trace(self, write_eqp, capsys):
        path = write_eqp("P := [n: Integer . c!n . end]\nmain P")
        assert main(['run', str(path), '--format', 'json']) == EXIT_ENGINE
        doc = TraceDocument.model_validate_json(capsys.readouterr().out)
        assert doc.final == 'error'

    def test_human_output(self, capsys):
        assert main(['run', bundled('qubit_pass')]) == EXIT_OK
        out = capsys.readouterr().out
        assert 'terminated' in out
        assert '\x1b[' not in out

    def test_trace_log_appended(self, monkeypatch, tmp_path):
        log = tmp_path / 'logs' / 'runs.jsonl'
        monkeypatch.setenv('EQPALG_TRACE_LOG', str(log))
        assert main(['run', bundled('qubit_pass')]) == EXIT_OK
        assert main(['run', bundled('qubit_pass')]) == EXIT_OK
        lines = log.read_text(encoding='utf-8').splitlines()
        assert len(lines) == 2
        entry = json.loads(lines[0])
        assert entry['kind'] == 'run'
        assert entry['status'] == 'terminated'


class TestGraph:
    def test_measurement_branches(self, write_eqp, capsys):
        path = write_eqp("P := [x: Qubit = |+>, m: Integer . measure[{x} -> m] . end]\nmain P")
        assert main(['graph', str(path), '--format', 'json']) == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        terminals = [t for t in summary['terminals'] if t['status'] == 'terminated']
        assert sorted(t['branch'] for t in terminals) == ['0', '1']
        assert all(t['probability'] == pytest.approx(0.5) for t in terminals)
        assert summary['truncated'] is False

    def test_human_table(self, capsys):
        assert main(['graph', bundled('buildepr')]) == EXIT_OK
        assert '终止概率合计' in capsys.readouterr().out


class TestTeleportCheck:
    def test_bundled_passes(self, capsys):
        assert main(['teleport-check', '--trials', '5', '--format', 'json']) == EXIT_OK
        doc = TeleportCheckDocument.model_validate_json(capsys.readouterr().out)
        assert doc.passed
        assert sorted(b.branch for b in doc.branches) == ['00', '01', '10', '11']
        assert all(b.runs == 5 and b.failures == 0 for b in doc.branches)
        assert all(b.min_fidelity == pytest.approx(1.0, abs=1e-9) for b in doc.branches)

    def test_explicit_path(self):
        assert main(['teleport-check', bundled('teleport'), '--trials', '2']) == EXIT_OK

    def test_mutation_fails(self, capsys):
        argv = ['teleport-check', '--trials', '3', '--mutate', 'drop-x-correction', '--format', 'json']
        assert main(argv) == EXIT_TELEPORT
        doc = TeleportCheckDocument.model_validate_json(capsys.readouterr().out)
        assert not doc.passed
        failing = {b.branch for b in doc.branches if b.failures}
        assert failing == {'01', '11'}
        assert doc.failures

    @pytest.mark.parametrize('mutation', ['drop-x-correction', 'drop-z-correction',
                                          'drop-first-cbit', 'drop-second-cbit'])
    def test_every_mutation_exits_nonzero(self, mutation):
        assert main(['teleport-check', '--trials', '2', '--mutate', mutation]) == EXIT_TELEPORT

    def test_human_mutation_report(self, capsys):
        assert main(['teleport-check', '--trials', '2', '--mutate', 'send-qubit-directly']) == EXIT_TELEPORT
        assert '未通过' in capsys.readouterr().out

    def test_zero_trials_is_vacuous(self, capsys):
        assert main(['teleport-check', '--trials', '0', '--format', 'json']) == EXIT_OK
        captured = capsys.readouterr()
        doc = TeleportCheckDocument.model_validate_json(captured.out)
        assert doc.passed and doc.trials == 0
        assert 'trials=0' in captured.err


class TestFmt:
    def test_matches_pretty_print(self, capsys):
        assert main(['fmt', bundled('teleport')]) == EXIT_OK
        assert capsys.readouterr().out == pretty_print(bundled_program('teleport'))

    def test_fmt_is_idempotent(self, write_eqp, capsys):
        assert main(['fmt', bundled('remote_cnot')]) == EXIT_OK
        once = capsys.readouterr().out
        assert main(['fmt', str(write_eqp(once))]) == EXIT_OK
        assert capsys.readouterr().out == once


class TestSchema:
    def test_run_schema_is_model_schema(self, capsys):
        assert main(['schema']) == EXIT_OK
        schema = json.loads(capsys.readouterr().out)
        assert schema == TraceDocument.model_json_schema()
        assert schema['additionalProperties'] is False

    def test_run_output_matches_schema(self, capsys):
        assert main(['schema', 'run']) == EXIT_OK
        schema = json.loads(capsys.readouterr().out)
        assert main(['run', bundled('teleport'), '--format', 'json']) == EXIT_OK
        out = capsys.readouterr().out
        TraceDocument.model_validate_json(out)
        doc = json.loads(out)
        assert set(schema['required']) <= set(doc) <= set(schema['properties'])
        step_props = schema['$defs']['StepRecord']['properties']
        assert all(set(step) <= set(step_props) for step in doc['steps'])

    def test_teleport_check_output_matches_schema(self, capsys):
        assert main(['schema', 'teleport-check']) == EXIT_OK
        schema = json.loads(capsys.readouterr().out)
        assert schema == TeleportCheckDocument.model_json_schema()
        assert main(['teleport-check', '--trials', '2', '--mutate', 'drop-z-correction',
                     '--format', 'json']) == EXIT_TELEPORT
        out = capsys.readouterr().out
        TeleportCheckDocument.model_validate_json(out)
        assert set(schema['required']) <= set(json.loads(out)) <= set(schema['properties'])


class TestConfig:
    def test_bad_integer(self, monkeypatch, capsys):
        monkeypatch.setenv('EQPALG_MAX_STEPS', 'many')
        assert main(['parse', bundled('teleport')]) == EXIT_INVALID
        assert 'EQPALG_MAX_STEPS' in capsys.readouterr().err

    def test_bad_policy(self, monkeypatch):
        monkeypatch.setenv('EQPALG_POLICY', 'greedy')
        assert main(['parse', bundled('teleport')]) == EXIT_INVALID

    def test_env_seed_is_default(self, monkeypatch, capsys):
        monkeypatch.setenv('EQPALG_SEED', '11')
        assert main(['run', bundled('qubit_pass'), '--format', 'json']) == EXIT_OK
        assert json.loads(capsys.readouterr().out)['seed'] == 11
