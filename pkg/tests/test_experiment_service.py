"""
Tests for the experiment service: runs, oracles, sweeps, replays and artifacts.
"""
import csv
import json
from unittest.mock import patch

import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import BlowUpError, ConfigError, HeaderMismatchError
from app.services.experiment_service import (
    ExperimentService,
    check_increments_header,
    expected_increments,
    parse_config,
)
from app.services.noise_field import derive_seed, sample_brownian_increments
from app.utils.io_utils import content_hash, read_increments, read_trajectory_bin, write_increments


@pytest.fixture
def service():
    return ExperimentService(figures=False)


def test_zero_perturbation_passes(service, make_config, write_config, tmp_path):
    """delta = 0 gives g = 0 everywhere and every verdict passes."""
    out = tmp_path / "out"
    result = service.run(write_config(make_config()), seed=1, out_dir=str(out))
    assert result.exit_code == 0
    assert all(g == 0.0 for g in result.report.paths.g)
    for name in (
        "config-echo.json",
        "report.json",
        "paths.csv",
        "increments.bin",
        "trajectory-1.csv",
        "trajectory-1.bin",
        "trajectory-2.bin",
    ):
        assert (out / name).exists(), name
        assert name in result.artifacts
    assert not (out / "energy.svg").exists()


def test_config_echo_hash(service, make_config, write_config, tmp_path):
    """The echo carries the resolved seed and the hash of everything else."""
    out = tmp_path / "out"
    service.run(write_config(make_config()), seed=4, out_dir=str(out))
    echo = json.loads((out / "config-echo.json").read_text())
    report = json.loads((out / "report.json").read_text())
    assert echo["seed"] == 4
    assert echo["experiment"]["slack_factor"] == 10.0
    assert echo["content_hash"] == content_hash(echo)
    assert report["config_hash"] == echo["content_hash"]


def test_missing_key_is_reported_with_its_path(service, make_config, write_config):
    """A missing noise.N names the key and a line."""
    config = make_config(noise={"N": None})
    with pytest.raises(ConfigError) as exc_info:
        service.run(write_config(config))
    assert exc_info.value.key == "noise.N"
    assert exc_info.value.line is not None
    assert exc_info.value.exit_code == 2


def test_unknown_key_rejected(make_config):
    """Config sections forbid extra keys."""
    with pytest.raises(ConfigError) as exc_info:
        parse_config(make_config(grid={"L": 1.0, "n": 64, "m": 3}))
    assert exc_info.value.key == "grid.m"


def test_invalid_json_reports_line(service, tmp_path):
    """Syntax errors carry the JSON line number."""
    path = tmp_path / "broken.json"
    path.write_text('{\n  "grid": {"L": 1.0,\n}\n')
    with pytest.raises(ConfigError) as exc_info:
        service.run(str(path))
    assert exc_info.value.line is not None
    assert str(exc_info.value).startswith("line ")


def test_seed_precedence(make_config):
    """--seed, then the config seed, then SPDE_SEED, then 0."""
    config = parse_config(make_config())
    seeded = parse_config(make_config(seed=4))
    with patch.object(settings, "default_seed", 9):
        assert ExperimentService.resolve_seed(None, config) == 9
        assert ExperimentService.resolve_seed(None, seeded) == 4
        assert ExperimentService.resolve_seed(3, seeded) == 3
    with patch.object(settings, "default_seed", None):
        assert ExperimentService.resolve_seed(None, config) == 0
    with pytest.raises(ConfigError):
        ExperimentService.resolve_seed(2 ** 64, config)


def test_heat_oracle_run(service, make_config, write_config, tmp_path):
    """Noise-free Fokker-Planck with constant a matches the Fourier decay."""
    config = make_config(
        time={"T": 1.0, "dt": 0.001, "stride": 100},
        equation={"kind": "FP", "scheme": "semi_implicit", "diffusion": {"kind": "constant", "value": 0.3}},
        noise={"N": 0},
        initial_condition={"profile": "cosine", "mode": 1},
        experiment={"mode": "oracle"},
    )
    result = service.run(write_config(config), seed=0, out_dir=str(tmp_path / "heat"))
    assert result.report.verdicts.oracle
    assert result.report.diagnostics["max_l2_error"] < 1e-6
    assert result.exit_code == 0
    assert (tmp_path / "heat" / "trajectory-exact.bin").exists()


def test_heat_oracle_rejects_degenerate_coefficient(service, make_config, tmp_path):
    """The closed form only exists for constant a."""
    config = parse_config(
        make_config(
            equation={"kind": "FP", "diffusion": {"kind": "degenerate_half", "value": 0.3}},
            noise={"N": 0},
            experiment={"mode": "oracle"},
        )
    )
    with pytest.raises(ConfigError) as exc_info:
        service.run_config(config, seed=0, out_dir=str(tmp_path))
    assert exc_info.value.key == "equation.diffusion.kind"


def test_gbm_oracle_strong_order(service, make_config, write_config, tmp_path):
    """Without diffusion each node is a GBM; the strong error ratio is about sqrt(2)."""
    config = make_config(
        time={"T": 1.0, "dt": 0.02},
        equation={"kind": "FP", "diffusion": {"kind": "constant", "value": 0.0}},
        noise={"N": 1, "c": 0.5, "use_window": False},
        experiment={"mode": "oracle", "ensemble_size": 800},
    )
    result = service.run(write_config(config), seed=2024, out_dir=str(tmp_path / "gbm"))
    diagnostics = result.report.diagnostics
    assert result.report.verdicts.oracle, diagnostics
    assert 1.25 <= diagnostics["ratio"] <= 1.60
    assert diagnostics["rms_error"][1] < diagnostics["rms_error"][0]


def test_runs_are_deterministic(service, make_config, write_config, tmp_path):
    """Same config and seed give byte-identical reports; the echo reruns to the same report."""
    config = make_config(experiment={"delta": 0.05, "ensemble_size": 2})
    path = write_config(config)
    service.run(path, seed=11, out_dir=str(tmp_path / "a"))
    service.run(path, seed=11, out_dir=str(tmp_path / "b"))
    first = (tmp_path / "a" / "report.json").read_bytes()
    assert first == (tmp_path / "b" / "report.json").read_bytes()

    service.run(str(tmp_path / "a" / "config-echo.json"), out_dir=str(tmp_path / "c"))
    assert first == (tmp_path / "c" / "report.json").read_bytes()


def test_replay_reproduces_trajectories(service, make_config, write_config, tmp_path):
    """Rerunning on the dumped increments gives bit-identical fields."""
    path = write_config(make_config(experiment={"delta": 0.05, "ensemble_size": 2}))
    service.run(path, seed=8, out_dir=str(tmp_path / "run"))
    result = service.replay(str(tmp_path / "run" / "increments.bin"), path, out_dir=str(tmp_path / "replay"))
    original = read_trajectory_bin(tmp_path / "run" / "trajectory-1.bin")
    replayed = read_trajectory_bin(tmp_path / "replay" / "trajectory-1.bin")
    np.testing.assert_array_equal(original.snapshots, replayed.snapshots)
    assert result.report.diagnostics["members"] == 1
    assert result.report.seed == read_increments(tmp_path / "run" / "increments.bin").master_seed


def test_increments_dump_records_both_seeds(service, make_config, write_config, tmp_path):
    """The dump keeps the master seed beside member 0's derived seed; a replay reports the master seed."""
    path = write_config(make_config(experiment={"delta": 0.05, "ensemble_size": 2}))
    original = service.run(path, seed=8, out_dir=str(tmp_path / "run"))
    incs = read_increments(tmp_path / "run" / "increments.bin")
    assert incs.master_seed == 8
    assert incs.seed == derive_seed(8, 0)
    assert original.report.diagnostics["increments_seed"] == incs.seed

    replayed = service.replay(str(tmp_path / "run" / "increments.bin"), path, out_dir=str(tmp_path / "replay"))
    assert replayed.report.seed == original.report.seed == 8
    assert replayed.report.diagnostics["increments_seed"] == incs.seed
    again = read_increments(tmp_path / "replay" / "increments.bin")
    assert (again.seed, again.master_seed) == (incs.seed, 8)
    np.testing.assert_array_equal(again.increments, incs.increments)


def test_increments_written_alone_default_to_their_own_seed(tmp_path):
    """Increments sampled outside an experiment use their seed as master seed."""
    incs = sample_brownian_increments(2, 10, 0.01, seed=5)
    assert incs.master_seed is None
    write_increments(tmp_path / "incs.bin", incs)
    loaded = read_increments(tmp_path / "incs.bin")
    assert (loaded.seed, loaded.master_seed) == (5, 5)
    assert loaded.coarsen(2).master_seed == 5
    write_increments(tmp_path / "other.bin", incs, master_seed=99)
    assert read_increments(tmp_path / "other.bin").master_seed == 99


def test_replay_header_mismatch(service, make_config, write_config, tmp_path):
    """Increments sampled with another dt are refused."""
    service.run(write_config(make_config()), seed=8, out_dir=str(tmp_path / "run"))
    other = write_config(make_config(time={"T": 0.04, "dt": 0.002}), name="other.json")
    with pytest.raises(HeaderMismatchError) as exc_info:
        service.replay(str(tmp_path / "run" / "increments.bin"), other, out_dir=str(tmp_path / "replay"))
    assert exc_info.value.key == "time.dt"


def test_expected_increments(make_config):
    """Mode A samples on the finest level, the GBM oracle at dt/2."""
    mode_a = parse_config(make_config(experiment={"mode": "A", "refinement_levels": 3}))
    assert expected_increments(mode_a) == (2, 80, pytest.approx(0.00025))
    oracle = parse_config(make_config(experiment={"mode": "oracle"}))
    assert expected_increments(oracle) == (2, 40, pytest.approx(0.0005))
    mode_b = parse_config(make_config())
    incs_config = parse_config(make_config(noise={"N": 3}))

    incs = sample_brownian_increments(2, 20, 0.001, seed=0)
    check_increments_header(incs, mode_b)
    with pytest.raises(HeaderMismatchError) as exc_info:
        check_increments_header(incs, incs_config)
    assert exc_info.value.key == "noise.N"


def test_sweep_rejects_bad_requests(service, make_config, write_config):
    """Empty value lists and non-scalar axes are configuration errors."""
    path = write_config(make_config())
    with pytest.raises(ConfigError) as exc_info:
        service.sweep(path, "dt", [])
    assert exc_info.value.key == "values"
    with pytest.raises(ConfigError):
        service.sweep(path, "grid", [1])
    with pytest.raises(ConfigError):
        service.sweep(path, "time.missing", [1])


def test_single_value_sweep_equals_run(service, make_config, write_config, tmp_path):
    """One value reproduces run with the master seed in the output directory itself."""
    path = write_config(make_config(experiment={"delta": 0.05}))
    service.run(path, seed=5, out_dir=str(tmp_path / "run"))
    result = service.sweep(path, "dt", [0.001], seed=5, out_dir=str(tmp_path / "sweep"))
    assert (tmp_path / "run" / "report.json").read_bytes() == (tmp_path / "sweep" / "report.json").read_bytes()
    assert result.rows[0]["seed"] == 5


def test_sweep_over_dt(service, make_config, write_config, tmp_path):
    """Each value gets its own directory, derived seed and CSV row."""
    path = write_config(make_config(experiment={"delta": 0.05}))
    out = tmp_path / "sweep"
    result = service.sweep(path, "dt", [0.001, 0.002], seed=5, out_dir=str(out))
    assert (out / "sweep-0" / "report.json").exists()
    assert (out / "sweep-1" / "report.json").exists()
    with (out / "sweep.csv").open(newline="") as f:
        rows = list(csv.DictReader(f))
    assert [row["value"] for row in rows] == ["0.001", "0.002"]
    assert rows[0]["seed"] != rows[1]["seed"]
    assert "margin_pathwise" in rows[0]
    summary = json.loads((out / "sweep.json").read_text())
    assert summary["key"] == "time.dt"
    assert len(result.runs) == 2


def test_sweep_over_epsilon_wraps_value(service, make_config, write_config, tmp_path):
    """The epsilon axis sets a one-entry ladder."""
    path = write_config(make_config(experiment={"delta": 0.05, "ensemble_size": 1}))
    result = service.sweep(path, "epsilon", [0.3], seed=1, out_dir=str(tmp_path / "eps"))
    echo = json.loads((tmp_path / "eps" / "config-echo.json").read_text())
    assert echo["experiment"]["eps_ladder"] == [0.3]
    assert result.runs[0].report.verdicts.epsilon_ladder is None


def test_blow_up_writes_last_state(service, make_config, write_config, tmp_path):
    """Overflow aborts the run and leaves the offending state on disk."""
    config = make_config(noise={"N": 1, "c": 1e100})
    out = tmp_path / "blowup"
    with pytest.raises(BlowUpError) as exc_info:
        service.run(write_config(config), seed=0, out_dir=str(out))
    assert exc_info.value.exit_code == 3
    state = np.fromfile(out / "blowup-state.bin", dtype="<f8")
    assert state.shape == (64,)
    assert not np.all(np.isfinite(state))


def test_figures_are_written(make_config, write_config, tmp_path):
    """With figures on, SVGs carry the plotted data in a comment."""
    service = ExperimentService(figures=True)
    out = tmp_path / "figs"
    result = service.run(write_config(make_config(experiment={"delta": 0.05, "ensemble_size": 1})), seed=1, out_dir=str(out))
    for name in ("energy.svg", "waterfall.svg", "epsilon.svg"):
        assert name in result.artifacts
        text = (out / name).read_text()
        assert "<!-- data: " in text
        assert "<svg" in text
