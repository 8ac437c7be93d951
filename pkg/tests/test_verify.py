import math
from pathlib import Path

import numpy as np
import pytest

from cli import parse_config
from integrate import BrownianDriver, InvalidConfigError, Mode, Scheme, SimConfig, simulate_path
from model import NOISE_NAMES, CoefficientFn, CoefficientSet, MomentSpec, NotH1Error, NotH2Error
from verify import (
    BLOWUP_LIMIT,
    FAILED,
    INCONCLUSIVE,
    INFO,
    PASSED,
    SKIPPED,
    Check,
    PreconditionError,
    TheoremId,
    UnboundedSurrogateError,
    Verdict,
    WrongModeError,
    check_loggrowth,
    check_moment_bound,
    check_moment_envelope,
    check_positivity,
    check_predator_extinction,
    check_prey_solo,
    deterministic_oracle,
    extinction_mean_bound,
    gbm_oracle_moment,
    horizon_is_adequate,
    overall_verdict,
    surrogate_supremum,
    upper_bound_status,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def statuses(report):
    return {check.name: check.status for check in report.checks}


def random_coefficient(rng, low, high, t_end, floor):
    """A constant, piecewise-constant or sinusoidal coefficient with infimum >= floor."""
    kind = rng.integers(3)
    if kind == 0:
        return CoefficientFn.constant(rng.uniform(low, high))
    if kind == 1:
        breakpoints = np.sort(rng.uniform(0.5, t_end, size=rng.integers(1, 4)))
        return CoefficientFn.piecewise(breakpoints, rng.uniform(low, high, size=breakpoints.size + 1))
    mean = rng.uniform(low, high)
    amplitude = rng.uniform(0.0, 0.9 * (mean - floor))
    return CoefficientFn.sinusoidal(mean, amplitude, rng.uniform(0.5, t_end), rng.uniform(0.0, 2.0 * math.pi))


# (low, high) per coefficient; self-limitation keeps densities of order one
RANDOM_RANGES = dict(
    a1=(0.1, 2.0), a2=(0.1, 2.0), b1=(0.5, 2.0), b2=(0.5, 2.0), c1=(0.1, 2.0), c2=(0.1, 2.0), e=(0.1, 2.0),
    sigma1=(0.0, 0.5), sigma2=(0.0, 0.1), rho1=(0.0, 0.5), rho2=(0.0, 0.1),
)


def random_coefficients(rng, t_end):
    return CoefficientSet(
        **{
            name: random_coefficient(rng, low, high, t_end, floor=0.0 if name in NOISE_NAMES else 0.05)
            for name, (low, high) in RANDOM_RANGES.items()
        }
    )


class TestVerdictRules:
    @pytest.mark.parametrize(
        "ci_low, ci_high, bound, slack, expected",
        [
            (0.5, 0.9, 1.0, 0.0, PASSED),
            (1.05, 1.09, 1.0, 0.1, PASSED),
            (1.2, 1.3, 1.0, 0.1, FAILED),
            (0.9, 1.2, 1.0, 0.1, INCONCLUSIVE),
            (1.0, 1.0, 1.0, 0.0, PASSED),
        ],
    )
    def test_upper_bound(self, ci_low, ci_high, bound, slack, expected):
        assert upper_bound_status(ci_low, ci_high, bound, slack) == expected

    def test_failure_outranks_inconclusive(self):
        checks = [Check("a", "", INCONCLUSIVE), Check("b", "", FAILED), Check("c", "", PASSED)]
        assert overall_verdict(checks) is Verdict.FAIL

    def test_informational_checks_do_not_count(self):
        checks = [Check("a", "", PASSED), Check("b", "", SKIPPED), Check("c", "", INFO)]
        assert overall_verdict(checks) is Verdict.PASS

    def test_horizon_adequacy(self):
        assert horizon_is_adequate(-0.505, 0.1, 50.0)
        assert not horizon_is_adequate(-0.004, 0.1, 50.0)


class TestSurrogate:
    def test_bounded_expression(self, h1_coefficients):
        found = surrogate_supremum(lambda x, y, v: 3.0 - (x - 1.0) ** 2 - (y - 2.0) ** 2, h1_coefficients)
        assert found.value == pytest.approx(3.0, abs=1e-2)

    def test_unbounded_expression(self, h1_coefficients):
        with pytest.raises(UnboundedSurrogateError):
            surrogate_supremum(lambda x, y, v: x + 0.0 * y, h1_coefficients)

    def test_follows_time_varying_coefficients(self, h1_coefficients):
        c = h1_coefficients.replace(a1=CoefficientFn.sinusoidal(1.0, 0.5, 2.0))
        found = surrogate_supremum(lambda x, y, v: v.a1 - (x - 1.0) ** 2 + 0.0 * y, c)
        assert found.value == pytest.approx(1.5, abs=1e-2)


class TestPositivity:
    def test_benchmark(self, h1_coefficients):
        cfg = SimConfig(t_end=2.0, dt=0.01, save_every=10)
        report = check_positivity(cfg, h1_coefficients, 20)
        assert report.verdict is Verdict.PASS
        assert report.theorem_id is TheoremId.T2_1_POSITIVITY
        assert report.n_blowups == 0

    def test_h2(self, h2_coefficients):
        cfg = SimConfig(t_end=2.0, dt=0.01, save_every=10, scheme=Scheme.MILSTEIN_LOG)
        assert check_positivity(cfg, h2_coefficients, 20).verdict is Verdict.PASS

    @pytest.mark.parametrize("mode, present", [(Mode.PREY_ABSENT, "y_t"), (Mode.PREDATOR_ABSENT, "x_t")])
    def test_absent_species_is_left_out(self, h1_coefficients, mode, present):
        cfg = SimConfig(t_end=2.0, dt=0.01, save_every=10, mode=mode)
        report = check_positivity(cfg, h1_coefficients, 10)
        assert report.verdict is Verdict.PASS
        assert report.checks[0].requirement.startswith(f"{present} > 0 at")
        assert report.checks[0].estimate > 0

    def test_coarse_steps_fail_on_blow_ups(self, h1_coefficients):
        # with dt = 10 the prey overshoots to hundreds and the next step leaves the guard
        cfg = SimConfig(t_end=50.0, dt=10.0, save_every=1)
        report = check_positivity(cfg, h1_coefficients, 20)
        assert report.verdict is Verdict.FAIL
        assert report.n_blowups / report.n_paths > BLOWUP_LIMIT
        assert statuses(report) == {"positive densities": PASSED, "blow-up fraction": FAILED}

    @pytest.mark.slow
    def test_random_valid_coefficients(self):
        rng = np.random.default_rng(2024)
        total_paths = total_blowups = 0
        for index in range(1000):
            c = random_coefficients(rng, t_end=10.0)
            scheme = Scheme.MILSTEIN_LOG if index % 2 else Scheme.EULER_MARUYAMA_LOG
            cfg = SimConfig(t_end=10.0, dt=1e-3, save_every=100, x0=rng.uniform(0.1, 5.0), y0=rng.uniform(0.1, 5.0), scheme=scheme)
            report = check_positivity(cfg, c, 10, master_seed=index)
            assert statuses(report)["positive densities"] == PASSED, c
            total_paths += report.n_paths
            total_blowups += report.n_blowups
        assert total_blowups / total_paths < BLOWUP_LIMIT


class TestMomentEnvelope:
    def test_benchmark_stays_under_envelope(self, h1_coefficients):
        cfg = SimConfig(t_end=5.0, dt=0.01, save_every=10)
        report = check_moment_envelope(cfg, h1_coefficients, 1.0, 1.0, 200)
        assert report.verdict is Verdict.PASS
        assert len(report.envelope_rows) == 51
        t, bound, mean, ci_low, ci_high = report.envelope_rows[0]
        assert (t, mean) == (0.0, 1.0)
        assert bound == pytest.approx(1.0)

    def test_needs_h1(self, h2_coefficients):
        with pytest.raises(NotH1Error):
            check_moment_envelope(SimConfig(t_end=1.0, dt=0.01), h2_coefficients, 1.0, 1.0, 4)

    def test_needs_full_mode(self, h1_coefficients):
        cfg = SimConfig(t_end=1.0, dt=0.01, mode=Mode.PREY_ABSENT)
        with pytest.raises(WrongModeError):
            check_moment_envelope(cfg, h1_coefficients, 1.0, 1.0, 4)


class TestMomentBound:
    def test_benchmark_is_not_refuted(self, h2_coefficients):
        cfg = SimConfig(t_end=20.0, dt=0.01, save_every=50, x0=0.9, y0=0.2, scheme=Scheme.MILSTEIN_LOG)
        report = check_moment_bound(cfg, h2_coefficients, MomentSpec(), 400)
        assert report.verdict is not Verdict.FAIL
        assert statuses(report)["time-averaged moment"] == PASSED
        assert report.window == (10.0, 20.0)

    def test_needs_h2(self, h1_coefficients):
        with pytest.raises(NotH2Error):
            check_moment_bound(SimConfig(t_end=1.0, dt=0.01), h1_coefficients, MomentSpec(), 4)

    def test_exponents_in_unit_interval(self, h2_coefficients):
        with pytest.raises(PreconditionError):
            check_moment_bound(SimConfig(t_end=1.0, dt=0.01), h2_coefficients, MomentSpec(theta1=1.5), 4)


class TestLogGrowth:
    def test_short_horizon_is_rejected(self, h1_coefficients):
        with pytest.raises(PreconditionError):
            check_loggrowth(SimConfig(t_end=50.0, dt=0.01), h1_coefficients, 1.0, 1.0, 4)

    def test_benchmark_growth_percentile(self, h1_coefficients):
        cfg = SimConfig(t_end=100.0, dt=0.02, save_every=25)
        report = check_loggrowth(cfg, h1_coefficients, 1.0, 1.0, 50)
        found = statuses(report)
        assert found["log-growth percentile"] == PASSED
        assert found["log-moment drift bound"] == INFO
        assert any("quadratic variation" in note for note in report.notes)

    def test_exponents_outside_unit_interval_skip_the_average(self, h1_coefficients):
        cfg = SimConfig(t_end=100.0, dt=0.05, save_every=20)
        report = check_loggrowth(cfg, h1_coefficients, 1.0, 1.0, 10, average_exponents=(1.0, 0.5))
        assert statuses(report)["time-averaged power"] == SKIPPED


class TestPredatorExtinction:
    def test_benchmark(self, h1_coefficients):
        cfg = SimConfig(t_end=50.0, dt=0.01, save_every=10, mode=Mode.PREY_ABSENT)
        report = check_predator_extinction(cfg, h1_coefficients, 100)
        assert report.verdict is Verdict.PASS
        assert statuses(report)["terminal extinction fraction"] == PASSED

    def test_needs_prey_absent(self, h1_coefficients):
        with pytest.raises(WrongModeError):
            check_predator_extinction(SimConfig(t_end=1.0, dt=0.01), h1_coefficients, 4)

    @pytest.mark.slow
    def test_longer_horizons_without_self_limitation_never_turn_to_fail(self, h1_coefficients):
        # b2 = 0 makes ln y a Brownian motion with drift -0.52, so the slope spread shrinks with t_end
        c = h1_coefficients.replace(b2=0.0, rho1=0.2)
        verdicts = []
        for t_end in (100.0, 200.0, 400.0, 800.0):
            cfg = SimConfig(t_end=t_end, dt=0.05, save_every=10, mode=Mode.PREY_ABSENT, blowup_guard=1000.0)
            report = check_predator_extinction(cfg, c, 200, master_seed=11, strict=False)
            assert statuses(report)["terminal extinction fraction"] == PASSED
            verdicts.append(report.verdict)
        first_pass = verdicts.index(Verdict.PASS)
        assert Verdict.FAIL not in verdicts[first_pass:]
        assert verdicts[-1] is Verdict.PASS


class TestPreySolo:
    def test_growth_case(self, h1_coefficients):
        cfg = SimConfig(t_end=20.0, dt=0.01, save_every=10, mode=Mode.PREDATOR_ABSENT)
        report = check_prey_solo(cfg, h1_coefficients, 50)
        assert report.verdict is Verdict.PASS
        assert "case=LOGGROWTH" in report.notes

    def test_exponential_case_short_horizon_is_inconclusive(self, h1_coefficients):
        cfg = SimConfig(t_end=50.0, dt=0.01, save_every=10, mode=Mode.PREDATOR_ABSENT)
        report = check_prey_solo(cfg, h1_coefficients.replace(a1=0.001), 50)
        found = statuses(report)
        assert found["log-slope percentile"] == PASSED
        assert found["terminal extinction fraction"] == INCONCLUSIVE
        assert report.verdict is Verdict.INCONCLUSIVE
        assert report.offending.details.startswith("horizon too short")

    def test_critical_case(self, h1_coefficients):
        cfg = SimConfig(t_end=20.0, dt=0.01, save_every=10, mode=Mode.PREDATOR_ABSENT)
        report = check_prey_solo(cfg, h1_coefficients.replace(a1=0.005), 200)
        assert "case=EXTINCTION_MEAN" in report.notes
        assert report.verdict is Verdict.PASS
        assert report.envelope_rows[0][1] == pytest.approx(0.0)

    def test_needs_predator_absent(self, h1_coefficients):
        with pytest.raises(WrongModeError):
            check_prey_solo(SimConfig(t_end=1.0, dt=0.01), h1_coefficients, 4)


class TestOracles:
    def test_gbm_moment(self):
        assert gbm_oracle_moment(0.5, 0.2, 2.0, 1.0, 3.0) == pytest.approx(2.0 * math.exp(1.5))
        np.testing.assert_allclose(gbm_oracle_moment(0.0, 0.0, 1.0, 3.0, [0.0, 1.0]), [1.0, 1.0])

    def test_deterministic_oracle_agrees_with_em(self, noise_free_coefficients):
        cfg = SimConfig(t_end=5.0, dt=0.001, save_every=100)
        reference = deterministic_oracle(cfg, noise_free_coefficients)
        em = simulate_path(cfg, noise_free_coefficients, BrownianDriver(0, 0, cfg.dt))
        np.testing.assert_allclose(reference.times, em.times)
        np.testing.assert_allclose(em.xs, reference.xs, rtol=1e-2)

    def test_deterministic_oracle_needs_zero_noise(self, h1_coefficients):
        with pytest.raises(InvalidConfigError):
            deterministic_oracle(SimConfig(t_end=1.0, dt=0.01), h1_coefficients)

    def test_halving_dt_halves_em_deviation(self, noise_free_coefficients):
        deviations = []
        for dt, save_every in ((0.01, 10), (0.005, 20)):
            cfg = SimConfig(t_end=5.0, dt=dt, save_every=save_every)
            reference = deterministic_oracle(cfg, noise_free_coefficients)
            em = simulate_path(cfg, noise_free_coefficients, BrownianDriver(0, 0, dt))
            deviations.append(max(np.max(np.abs(em.xs - reference.xs)), np.max(np.abs(em.ys - reference.ys))))
        assert 0.4 <= deviations[1] / deviations[0] <= 0.6

    def test_comparison_solution(self, h1_coefficients):
        np.testing.assert_allclose(extinction_mean_bound(h1_coefficients, 0.0, [0.0, 1.0]), [0.0, -math.log(2.0)])


@pytest.mark.slow
class TestAcceptance:
    def test_envelope_at_scale(self, h1_coefficients):
        cfg = SimConfig(t_end=50.0, dt=1e-3, save_every=100)
        assert check_moment_envelope(cfg, h1_coefficients, 1.0, 1.0, 10_000, n_jobs=0).verdict is Verdict.PASS

    def test_moment_bound_at_scale(self, h2_coefficients):
        cfg = SimConfig(t_end=50.0, dt=1e-3, save_every=100, scheme=Scheme.MILSTEIN_LOG)
        assert check_moment_bound(cfg, h2_coefficients, MomentSpec(), 10_000, n_jobs=0).verdict is Verdict.PASS

    def test_predator_extinction_at_scale(self):
        sim, c, harness = parse_config((CONFIGS / "predator_extinction.cfg").read_text())
        report = check_predator_extinction(sim, c, harness.n_paths, harness.master_seed, n_jobs=0)
        # the 95th percentile slope of this noise level sits right at the slackened rate
        assert report.verdict is not Verdict.FAIL
        found = statuses(report)
        assert found["terminal extinction fraction"] == PASSED
        assert found["log-slope percentile"] in (PASSED, INCONCLUSIVE)

    def test_positivity_at_scale(self, h2_coefficients):
        cfg = SimConfig(t_end=50.0, dt=1e-3, save_every=100, scheme=Scheme.MILSTEIN_LOG)
        report = check_positivity(cfg, h2_coefficients, 10_000, n_jobs=0)
        assert report.verdict is Verdict.PASS
