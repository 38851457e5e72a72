"""
Tests for cli_tools.py - the robust-mdp-tools front end.

These tests verify:
- Exit codes (0 pass, 1 failed check, 2 input error)
- Text and JSON output of the commands
- Policy selection helpers
"""

import json
from fractions import Fraction

import pytest


def run_json(capsys, *argv):
    """Run main with --json and return (exit code, parsed report)."""
    from robust_mdp_lab.cli_tools import main

    code = main([*argv, '--json'])
    return code, json.loads(capsys.readouterr().out)


def result_value(report, quantity):
    return next(r['value'] for r in report['results'] if r['quantity'] == quantity)


@pytest.mark.unit
@pytest.mark.cli
class TestBasics:
    """Tests for argument handling and the simple commands."""

    def test_no_command(self, capsys):
        """Verify running without a command prints help and returns 1."""
        from robust_mdp_lab.cli_tools import main

        assert main([]) == 1
        assert 'robust-mdp-tools' in capsys.readouterr().out

    def test_list(self, capsys):
        """Verify list prints every library instance."""
        from robust_mdp_lab.cli_tools import main

        assert main(['list']) == 0
        out = capsys.readouterr().out
        assert '5 library instance(s)' in out
        assert 'appendix_d' in out

    def test_export_library(self, capsys, tmp_path):
        """Verify export writes a loadable instance file."""
        from robust_mdp_lab.cli_tools import main
        from robust_mdp_lab.instance_format import load_instance

        target = tmp_path / 'example.json'
        assert main(['export', 'example_4_2', '--out', str(target)]) == 0
        assert 'Wrote' in capsys.readouterr().out
        assert load_instance(target).name == 'example_4_2'

    def test_export_random(self, tmp_path):
        """Verify random export honours the generator flags."""
        from robust_mdp_lab.cli_tools import main
        from robust_mdp_lab.instance_format import load_instance
        from robust_mdp_lab.uncertainty_models import FactorModel

        target = tmp_path / 'random.json'
        assert main(['export', 'random', '--variant', 'factor_model', '--states', '2',
                     '--state-rewards', '--seed', '4', '--out', str(target)]) == 0
        instance = load_instance(target)
        assert isinstance(instance.uncertainty, FactorModel)
        assert instance.mdp.num_states == 2
        assert instance.mdp.is_next_state_independent()

    def test_missing_file(self, capsys):
        """Verify an unreadable instance path exits with 2."""
        from robust_mdp_lab.cli_tools import main

        assert main(['evaluate', 'does/not/exist.json']) == 2
        assert 'Error' in capsys.readouterr().err

    def test_kernel_out_of_range(self, capsys):
        """Verify a bad --kernel index is an input error."""
        from robust_mdp_lab.cli_tools import main

        assert main(['evaluate', 'example_3_1', '--mode', 'exact', '--kernel', '99']) == 2

    def test_instance_file(self, capsys, tmp_instance_file):
        """Verify a JSON path works wherever a library name does."""
        code, report = run_json(capsys, 'evaluate', str(tmp_instance_file), '--mode', 'exact')

        assert code == 0
        assert report['inputs']['instance'] == 'appendix_d'


@pytest.mark.unit
@pytest.mark.cli
class TestEvaluateAndSolve:
    """Tests for evaluate and solve."""

    def test_robust_operators(self, capsys):
        """Verify robust-s and robust-sa on the gap fixture."""
        _, s_report = run_json(capsys, 'evaluate', 'sa_gap_fixture', '--mode', 'robust-s')
        _, sa_report = run_json(capsys, 'evaluate', 'sa_gap_fixture', '--mode', 'robust-sa')

        assert result_value(s_report, 'mu^T v') == pytest.approx(0.5, abs=1e-6)
        assert result_value(sa_report, 'mu^T v') == pytest.approx(0.0, abs=1e-6)
        assert s_report['details']['iterations'] >= 1

    def test_oracle_mode(self, capsys):
        """Verify the oracle reproduces the closed-form worst case from a."""
        code, report = run_json(capsys, 'evaluate', 'appendix_d', '--start', 'a',
                                '--policy-name', 'beta0', '--mode', 'oracle')

        assert code == 0
        assert result_value(report, 'oracle min mu^T v') == pytest.approx(float(Fraction(7, 96)), abs=1e-6)
        assert result_value(report, 'argmin p') == pytest.approx(0.75, abs=1e-3)

    def test_inline_policy(self, capsys):
        """Verify --policy-inline selects the stay-in-state policy."""
        code, report = run_json(capsys, 'evaluate', 'example_3_1', '--mode', 'exact',
                                '--kernel', '3', '--policy-inline', '1;1')

        assert code == 0
        # kernel (1, 1) keeps both states in place
        assert result_value(report, 'v[1]') == pytest.approx(10.0)
        assert result_value(report, 'v[2]') == pytest.approx(0.0)

    def test_policy_file(self, capsys, tmp_path):
        """Verify --policy reads an S x A matrix and checks its shape."""
        from robust_mdp_lab.cli_tools import main

        good, bad = tmp_path / 'good.json', tmp_path / 'bad.json'
        good.write_text('[[1.0], [1.0]]')
        bad.write_text('[[0.5, 0.5], [1.0, 0.0]]')

        assert main(['evaluate', 'example_3_1', '--policy', str(good)]) == 0
        capsys.readouterr()
        assert main(['evaluate', 'example_3_1', '--policy', str(bad)]) == 2

    def test_ragged_policy_file(self, capsys, tmp_path):
        """Verify a ragged or non-numeric policy file is an input error, not a crash."""
        from robust_mdp_lab.cli_tools import main

        ragged, words = tmp_path / 'ragged.json', tmp_path / 'words.json'
        ragged.write_text('[[1.0], [0.5, 0.5]]')
        words.write_text('[["one"], ["one"]]')

        assert main(['evaluate', 'example_3_1', '--policy', str(ragged)]) == 2
        assert main(['evaluate', 'example_3_1', '--policy', str(words)]) == 2

    def test_solve_dp(self, capsys):
        """Verify the dynamic programme randomizes at a."""
        code, report = run_json(capsys, 'solve', 'example_4_2')

        assert code == 0
        assert result_value(report, 'mu^T u*') == pytest.approx(0.25, abs=1e-6)
        assert result_value(report, 'pi[a][0]') == pytest.approx(0.5, abs=1e-6)
        assert result_value(report, 'deterministic') == 0.0


@pytest.mark.unit
@pytest.mark.cli
class TestChecks:
    """Tests for check-ssp, verify-theorem and reproduce."""

    def test_check_ssp(self, capsys):
        """Verify the finite example survives its strong_s search."""
        code, report = run_json(capsys, 'check-ssp', 'example_3_1', '--mode', 'strong_s', '--samples', '200')

        assert code == 0
        assert result_value(report, 'holds') == 1.0
        assert result_value(report, 'samples checked') == 200.0
        assert report['details']['verdict']['mode'] == 'strong_s'

    @pytest.mark.oracle
    def test_tractability_exit_codes(self, capsys):
        """Verify the pair-wise operator fails on the gap fixture and the state-wise one passes."""
        from robust_mdp_lab.cli_tools import main

        assert main(['verify-theorem', 'sa_gap_fixture', '--operator', 'sa', '--grid', '11']) == 1
        capsys.readouterr()
        assert main(['verify-theorem', 'sa_gap_fixture', '--operator', 's', '--grid', '11']) == 0

    def test_horizon(self, capsys):
        """Verify the finite-horizon bound check passes on a library instance."""
        code, report = run_json(capsys, 'verify-theorem', 'example_3_1', '--check', 'horizon',
                                '--horizon', '1', '3')

        assert code == 0
        assert len(report['results']) == 2

    def test_reproduce_single(self, capsys, tmp_path):
        """Verify reproduce --name checks one instance and writes --out."""
        from robust_mdp_lab.cli_tools import main

        target = tmp_path / 'report.json'
        assert main(['reproduce', '--name', 'example_3_1', '--out', str(target)]) == 0
        saved = json.loads(target.read_text())
        assert saved['inputs']['suite'] is False
        assert saved['passed'] is True


@pytest.mark.unit
@pytest.mark.cli
class TestHelpers:
    """Tests for the small helpers."""

    def test_parse_inline_policy(self):
        """Verify rows and entries are split on ';' and ','."""
        from robust_mdp_lab.cli_tools import parse_inline_policy

        policy = parse_inline_policy("0.5,0.5;1,0", 2, 2)
        assert policy.action_probs.tolist() == [[0.5, 0.5], [1.0, 0.0]]

    @pytest.mark.parametrize("text", ["0.5,x;1,0", "1,0", "1;1;1"])
    def test_parse_inline_policy_errors(self, text):
        """Verify malformed or wrongly shaped policies are format errors."""
        from robust_mdp_lab.cli_tools import parse_inline_policy
        from robust_mdp_lab.errors import InstanceFormatError

        with pytest.raises(InstanceFormatError):
            parse_inline_policy(text, 2, 2)

    def test_rounded(self):
        """Verify nested floats are rounded to the output precision."""
        from robust_mdp_lab.cli_tools import rounded

        assert rounded({'a': [1.0 / 3.0, 2], 'b': 'x'}) == {'a': [0.333333333333, 2], 'b': 'x'}

    def test_rounded_non_finite_is_null(self):
        """Verify NaN and infinities are written as JSON null."""
        from robust_mdp_lab.cli_tools import rounded

        cleaned = rounded({'gap': float('nan'), 'bound': [float('inf'), 0.5]})
        assert cleaned == {'gap': None, 'bound': [None, 0.5]}
        assert json.loads(json.dumps(cleaned)) == cleaned
        assert 'NaN' not in json.dumps(cleaned)
