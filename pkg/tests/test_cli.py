"""
Tests for the command-line entry point.
"""
import json

from cli import main, parse_values


def test_parse_values():
    """Values are comma or space separated and read as JSON when possible."""
    assert parse_values(["1e-3,5e-4", "8"]) == [0.001, 0.0005, 8]
    assert parse_values(["abc", " , "]) == ["abc"]
    assert parse_values([]) == []


def test_run_exit_code_and_summary(make_config, write_config, tmp_path, capsys):
    """A passing run exits with 0 and prints its verdicts."""
    out = tmp_path / "out"
    code = main(["run", write_config(make_config()), "--seed", "1", "--out", str(out), "--no-figures"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["exit_code"] == 0
    assert summary["verdicts"]["pathwise"] is True
    assert (out / "report.json").exists()


def test_config_error_exit_code(make_config, write_config, capsys):
    """Configuration errors exit with 2 and name the key."""
    code = main(["run", write_config(make_config(noise={"N": None})), "--no-figures"])
    assert code == 2
    assert "noise.N" in capsys.readouterr().err


def test_empty_sweep_is_a_config_error(make_config, write_config, tmp_path, capsys):
    """A sweep without values is refused."""
    code = main(["sweep", write_config(make_config()), "--axis", "dt", "--out", str(tmp_path)])
    assert code == 2
    assert "at least one value" in capsys.readouterr().err


def test_sweep_summary(make_config, write_config, tmp_path, capsys):
    """Sweep prints one row per value."""
    code = main(
        ["sweep", write_config(make_config()), "--axis", "delta", "--values", "0,0.0", "--seed", "2",
         "--out", str(tmp_path / "sweep"), "--no-figures"]
    )
    summary = json.loads(capsys.readouterr().out)
    assert code == 0
    assert [row["index"] for row in summary["rows"]] == [0, 1]


def test_blow_up_exit_code(make_config, write_config, tmp_path, capsys):
    """Numerical blow-up exits with 3."""
    config = make_config(noise={"N": 1, "c": 1e100})
    code = main(["run", write_config(config), "--seed", "0", "--out", str(tmp_path / "b"), "--no-figures"])
    assert code == 3
    assert "non-finite" in capsys.readouterr().err


def test_missing_command_prints_help(capsys):
    """Without a subcommand the usage is printed."""
    assert main([]) == 2
    assert "usage" in capsys.readouterr().out


def test_assumption_violation_names_the_assumption(make_config, write_config, tmp_path, capsys):
    """A noise basis with diverging sums exits with 2 and names the violated assumption."""
    config = make_config(noise={"N": 2, "p": 1.2})
    code = main(["run", write_config(config), "--seed", "0", "--out", str(tmp_path / "a"), "--no-figures"])
    assert code == 2
    err = capsys.readouterr().err
    assert "assumption noise_summability" in err
    assert "p=1.2" in err
