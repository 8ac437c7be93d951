from pathlib import Path

import pytest

from cli import (
    EXIT_ERROR,
    EXIT_FAIL,
    EXIT_INCONCLUSIVE,
    EXIT_PASS,
    HarnessParams,
    ParseError,
    RunManifest,
    SemanticError,
    emit_config,
    fingerprint,
    format_number,
    main,
    parse_config,
)
from integrate import Mode, Scheme
from model import CoefficientKind, predator_extinction_rate


@pytest.fixture
def config_file(tmp_path, benchmark_text):
    path = tmp_path / "run.cfg"
    path.write_text(benchmark_text)
    return path


class TestParseConfig:
    def test_benchmark(self, benchmark_text):
        sim, coefficients, harness = parse_config(benchmark_text)
        assert (sim.t_end, sim.dt, sim.save_every) == (1.0, 0.01, 10)
        assert sim.scheme is Scheme.EULER_MARUYAMA_LOG
        assert sim.mode is Mode.FULL
        assert coefficients.a1.value == 1.0
        assert coefficients.sigma2.vanishes
        assert (harness.n_paths, harness.master_seed) == (8, 3)
        assert harness.varrho1 == 0.5

    def test_time_varying_coefficients(self, benchmark_text):
        text = benchmark_text.replace(
            "a1.value = 1",
            "a1.kind = sinusoidal\na1.mean = 1\na1.amplitude = 0.3\na1.period = 10",
        ).replace("a2.value = 0.5", "a2.breakpoints = 25\na2.values = 0.5,0.6")
        _, coefficients, _ = parse_config(text)
        assert coefficients.a1.kind is CoefficientKind.SINUSOIDAL
        assert coefficients.a2.kind is CoefficientKind.PIECEWISE
        assert coefficients.a2.values == (0.5, 0.6)

    def test_inline_comment(self, benchmark_text):
        sim, _, _ = parse_config(benchmark_text.replace("dt = 0.01", "dt = 0.02  # coarser"))
        assert sim.dt == 0.02

    def test_duplicate_key_names_both_lines(self):
        with pytest.raises(ParseError) as raised:
            parse_config("t_end = 1\n\n\nt_end = 2\n")
        assert "line 1" in str(raised.value)
        assert "line 4" in str(raised.value)

    def test_unknown_key(self, benchmark_text):
        with pytest.raises(ParseError):
            parse_config(benchmark_text + "gamma = 2\n")

    def test_unreadable_number(self, benchmark_text):
        with pytest.raises(ParseError):
            parse_config(benchmark_text.replace("dt = 0.01", "dt = small"))

    def test_missing_rate_coefficient(self, benchmark_text):
        with pytest.raises(SemanticError):
            parse_config(benchmark_text.replace("c1.value = 0.5\n", ""))

    def test_missing_horizon(self, benchmark_text):
        with pytest.raises(SemanticError):
            parse_config(benchmark_text.replace("t_end = 1\n", ""))

    def test_field_of_another_kind(self, benchmark_text):
        with pytest.raises(SemanticError):
            parse_config(benchmark_text.replace("a1.value = 1", "a1.value = 1\na1.period = 3"))

    def test_strict_validation(self, benchmark_text):
        text = benchmark_text.replace("a1.value = 1", "a1.kind = sinusoidal\na1.mean = 1\na1.amplitude = 2")
        with pytest.raises(SemanticError) as raised:
            parse_config(text)
        assert "a1 infimum ≤ 0" in str(raised.value)
        _, coefficients, harness = parse_config(text + "validation = relaxed\n")
        assert not harness.strict
        assert coefficients.a1.declared_inf == -1.0

    def test_shipped_predator_extinction_config(self):
        text = (Path(__file__).resolve().parents[1] / "configs" / "predator_extinction.cfg").read_text()
        sim, coefficients, harness = parse_config(text)
        assert (sim.t_end, sim.mode, harness.n_paths) == (100.0, Mode.PREY_ABSENT, 1000)
        assert (coefficients.a2.value, coefficients.rho1.value, coefficients.b2.value) == (0.5, 0.2, 1.0)
        assert predator_extinction_rate(coefficients) == pytest.approx(-0.52)


class TestManifest:
    def test_round_trip_keeps_fingerprint(self, benchmark_text):
        manifest = RunManifest(*parse_config(benchmark_text))
        again = RunManifest(*parse_config(emit_config(manifest)))
        assert emit_config(again) == emit_config(manifest)
        assert fingerprint(again) == fingerprint(manifest)

    def test_any_change_moves_fingerprint(self, benchmark_text):
        manifest = RunManifest(*parse_config(benchmark_text))
        changed = RunManifest(*parse_config(benchmark_text.replace("seed = 3", "seed = 4")))
        assert fingerprint(changed) != fingerprint(manifest)

    def test_emitted_keys_are_sorted(self, benchmark_text):
        lines = emit_config(RunManifest(*parse_config(benchmark_text))).splitlines()
        keys = [line.split("=", 1)[0] for line in lines]
        assert keys == sorted(keys)

    def test_number_format(self):
        assert format_number(7) == "7"
        assert format_number(0.5).startswith("0.5000000000000000")


class TestMain:
    def test_simulate_is_byte_identical(self, tmp_path, config_file):
        for name in ("a", "b"):
            assert main(["simulate", "--config", str(config_file), "--out", str(tmp_path / name)]) == EXIT_PASS
        first = (tmp_path / "a" / "path.csv").read_bytes()
        assert first == (tmp_path / "b" / "path.csv").read_bytes()
        assert first.startswith(b"# fingerprint=")
        assert (tmp_path / "a" / "manifest.cfg").exists()

    def test_absent_species_has_no_column(self, tmp_path, config_file, benchmark_text):
        config_file.write_text(benchmark_text + "mode = PREY_ABSENT\n")
        assert main(["simulate", "--config", str(config_file), "--out", str(tmp_path)]) == EXIT_PASS
        lines = (tmp_path / "path.csv").read_text().splitlines()
        assert lines[1] == "t,y"
        assert len(lines) == 2 + 11

    def test_ensemble_columns(self, tmp_path, config_file):
        assert main(["ensemble", "--config", str(config_file), "--out", str(tmp_path)]) == EXIT_PASS
        lines = (tmp_path / "moments.csv").read_text().splitlines()
        assert lines[1] == "t,mean_x,mean_y,moment,se,ci_low,ci_high,n_blowups"
        assert float(lines[2].split(",")[0]) == 0.0
        assert len(lines) == 2 + 11

    def test_ensemble_ignores_thread_count(self, tmp_path, config_file):
        assert main(["ensemble", "--config", str(config_file), "--out", str(tmp_path / "one")]) == EXIT_PASS
        assert main(["ensemble", "--config", str(config_file), "--out", str(tmp_path / "two"), "--threads", "2"]) == EXIT_PASS
        assert (tmp_path / "one" / "moments.csv").read_bytes() == (tmp_path / "two" / "moments.csv").read_bytes()

    def test_seed_override_changes_results(self, tmp_path, config_file):
        main(["simulate", "--config", str(config_file), "--out", str(tmp_path / "a")])
        main(["simulate", "--config", str(config_file), "--out", str(tmp_path / "b"), "--seed", "99"])
        assert (tmp_path / "a" / "path.csv").read_bytes() != (tmp_path / "b" / "path.csv").read_bytes()

    def test_verify_positivity(self, tmp_path, config_file):
        out = tmp_path / "verify"
        assert main(["verify", "T2_1_POSITIVITY", "--config", str(config_file), "--out", str(out)]) == EXIT_PASS
        report = (out / "report_T2_1_POSITIVITY.txt").read_text()
        assert "verdict = PASS" in report

    def test_verify_positivity_without_prey(self, tmp_path, config_file, benchmark_text):
        config_file.write_text(benchmark_text + "mode = PREY_ABSENT\n")
        assert main(["verify", "T2_1_POSITIVITY", "--config", str(config_file), "--out", str(tmp_path)]) == EXIT_PASS
        report = (tmp_path / "report_T2_1_POSITIVITY.txt").read_text()
        assert "check.0.requirement = y_t > 0 at every save time of every path" in report

    def test_moment_bound_under_h1_is_an_error(self, tmp_path, config_file):
        assert main(["verify", "T3_3_MOMENT_BOUND", "--config", str(config_file), "--out", str(tmp_path)]) == EXIT_ERROR
        assert not (tmp_path / "report_T3_3_MOMENT_BOUND.txt").exists()

    def test_coarse_step_blow_ups_fail_positivity(self, tmp_path, config_file, benchmark_text):
        # one step of 10 overshoots the prey to hundreds, the next leaves the guard
        text = benchmark_text.replace("t_end = 1\n", "t_end = 50\n").replace("dt = 0.01", "dt = 10").replace("save_every = 10", "save_every = 1")
        config_file.write_text(text)
        assert main(["verify", "T2_1_POSITIVITY", "--config", str(config_file), "--out", str(tmp_path)]) == EXIT_FAIL
        report = (tmp_path / "report_T2_1_POSITIVITY.txt").read_text()
        assert "verdict = FAIL" in report
        assert "offending.name = blow-up fraction" in report

    def test_short_extinction_horizon_is_inconclusive(self, tmp_path, config_file, benchmark_text):
        config_file.write_text(benchmark_text + "mode = PREY_ABSENT\n")
        status = main(["verify", "T4_3_PREDATOR_EXTINCTION", "--config", str(config_file), "--out", str(tmp_path)])
        assert status == EXIT_INCONCLUSIVE
        report = (tmp_path / "report_T4_3_PREDATOR_EXTINCTION.txt").read_text()
        assert "verdict = INCONCLUSIVE" in report
        assert "offending.name = terminal extinction fraction" in report

    def test_verify_envelope_writes_rows(self, tmp_path, config_file):
        out = tmp_path / "envelope"
        assert main(["verify", "T3_2_MOMENT_ENVELOPE", "--config", str(config_file), "--out", str(out), "--paths", "50"]) == EXIT_PASS
        rows = (out / "envelope.csv").read_text().splitlines()
        assert rows[1] == "t,bound,estimate,ci_low,ci_high"
        assert len(rows) == 2 + 11

    def test_wrong_mode_is_an_error(self, tmp_path, config_file, benchmark_text):
        config_file.write_text(benchmark_text + "mode = PREY_ABSENT\n")
        assert main(["verify", "T3_2_MOMENT_ENVELOPE", "--config", str(config_file), "--out", str(tmp_path)]) == EXIT_ERROR

    def test_convergence_writes_slope(self, tmp_path, benchmark_text):
        text = benchmark_text.replace("sigma1.value = 0.1\n", "").replace("rho1.value = 0.1\n", "")
        config = tmp_path / "noise_free.cfg"
        config.write_text(text + "dt_coarse = 0.0625\nlevels = 3\n")
        assert main(["convergence", "--config", str(config), "--out", str(tmp_path / "order"), "--paths", "2"]) == EXIT_PASS
        lines = (tmp_path / "order" / "order.csv").read_text().splitlines()
        assert lines[1] == "dt,strong_error"
        assert len(lines) == 2 + 3 + 1
        assert lines[-1].startswith("# slope=")

    @pytest.mark.parametrize(
        "argv",
        [
            ["verify", "T9_UNKNOWN", "--config", "x.cfg"],
            ["simulate"],
            ["simulate", "--config", "missing.cfg"],
            ["teleport"],
        ],
    )
    def test_usage_and_missing_files_exit_with_error(self, argv, tmp_path):
        assert main(argv + ["--out", str(tmp_path)] if "--config" in argv else argv) == EXIT_ERROR


def test_default_harness_parameters():
    harness = HarnessParams()
    assert (harness.n_paths, harness.dt_coarse, harness.levels) == (1000, 2 ** -6, 4)
    assert harness.strict
