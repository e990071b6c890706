"""Unit tests for scenario configuration.

Feature: msfilter
Tests scenario parsing, density records, validation errors with their
source lines, bundled scenarios, and output directory precedence.
"""

from __future__ import annotations

import os
from collections.abc import Generator
from pathlib import Path

import pytest

from msfilter.core.config import (
    DEFAULT_CONFIG,
    OUT_DIR_ENV,
    ConfigError,
    _deep_merge,
    bundled_scenarios,
    load_scenario,
    parse_density,
    parse_scenario,
    resolve_output_dir,
)
from msfilter.core.densities import (
    DiscreteNoise,
    ExpPoly,
    Gaussian,
    Laplace,
    Mixture,
    StudentT,
)
from msfilter.core.moments import MomentSequence

MINIMAL_FIT = """\
mode = "fit"
order = 4

[target]
kind = "gaussian"
std = 1.0
"""

MINIMAL_FILTER = """\
mode = "filter"
order = 4

[system]
f = 0.9
observations = [0.1, -0.2, 0.3]

[system.process_noise]
kind = "gaussian"
std = 0.5

[system.obs_noise]
kind = "gaussian"
std = 1.0

[system.init]
kind = "gaussian"
std = 1.0
"""


@pytest.fixture
def clean_env() -> Generator[None]:
    """Ensure MSF_OUT_DIR is not set during tests."""
    original = os.environ.pop(OUT_DIR_ENV, None)
    yield
    if original is not None:
        os.environ[OUT_DIR_ENV] = original


class TestParseScenario:
    """Tests for parsing whole scenario documents."""

    def test_minimal_fit_scenario(self) -> None:
        config = parse_scenario(MINIMAL_FIT, name="minimal")
        assert config.name == "minimal"
        assert config.mode == "fit"
        assert config.order == 4
        assert config.target == Gaussian(0.0, 1.0)
        assert config.prior.mode == "gaussian"
        assert config.prior.c == 3.0
        assert config.solver.grad_tol == 1e-9
        assert config.quadrature.fixed_nodes == 2001
        assert config.oracle.enabled is False
        assert config.output.dir == "msf-output"
        assert config.system is None

    def test_name_defaults_to_source_stem(self) -> None:
        assert parse_scenario(MINIMAL_FIT, source="runs/bimodal.toml").name == "bimodal"

    def test_filter_scenario_broadcasts_scalars(self) -> None:
        config = parse_scenario(MINIMAL_FILTER)
        system = config.system
        assert system is not None
        assert system.horizon == 3
        assert system.f == (0.9, 0.9, 0.9)
        assert system.h == (1.0, 1.0, 1.0)
        assert system.process_noise == (Gaussian(0.0, 0.5),) * 3
        assert system.observations == (0.1, -0.2, 0.3)
        assert system.fit_init is False

    def test_empty_observation_list(self) -> None:
        text = MINIMAL_FILTER.replace("observations = [0.1, -0.2, 0.3]", "observations = []")
        system = parse_scenario(text).system
        assert system is not None
        assert system.observations == ()
        assert system.horizon == 0

    def test_simulated_observations(self) -> None:
        text = MINIMAL_FILTER.replace("observations = [0.1, -0.2, 0.3]", "steps = 5")
        system = parse_scenario(text).system
        assert system is not None
        assert system.observations is None
        assert system.horizon == 5

    def test_explicit_prior(self) -> None:
        text = (
            MINIMAL_FIT
            + '\n[prior]\nmode = "explicit"\n\n[prior.density]\nkind = "laplace"\nscale = 2.0\n'
        )
        config = parse_scenario(text)
        assert config.prior.mode == "explicit"
        assert config.prior.density == Laplace(0.0, 2.0)

    def test_settings_overrides(self) -> None:
        text = MINIMAL_FIT + "\n[solver]\nmax_iters = 50\n\n[quadrature]\nrel_tol = 1e-8\n"
        config = parse_scenario(text)
        assert config.solver.max_iters == 50
        assert config.quadrature.rel_tol == 1e-8


class TestValidationErrors:
    """Tests for validation errors and their locations."""

    def test_invalid_order_reports_line(self) -> None:
        with pytest.raises(ConfigError) as exc_info:
            parse_scenario(MINIMAL_FIT.replace("order = 4", "order = 5"), source="bad.toml")
        assert exc_info.value.key == "order"
        assert exc_info.value.line == 2
        assert str(exc_info.value).startswith("bad.toml:2:")

    def test_invalid_density_kind_reports_line(self) -> None:
        with pytest.raises(ConfigError) as exc_info:
            parse_scenario(MINIMAL_FIT.replace('kind = "gaussian"', 'kind = "weird"'))
        assert exc_info.value.key == "target.kind"
        assert exc_info.value.line == 5

    def test_invalid_toml(self) -> None:
        with pytest.raises(ConfigError, match="Invalid TOML"):
            parse_scenario("mode = ", source="broken.toml")

    @pytest.mark.parametrize(
        ("text", "key"),
        [
            ('mode = "plot"\n', "mode"),
            ("order = 18\n[target]\nkind = \"gaussian\"\nstd = 1.0\n", "order"),
            ("seed = -1\n[target]\nkind = \"gaussian\"\nstd = 1.0\n", "seed"),
            ('mode = "fit"\n', "target"),
            ('mode = "filter"\n', "system"),
            (MINIMAL_FIT + '\n[prior]\nmode = "bogus"\n', "prior.mode"),
            (MINIMAL_FIT + "\n[prior]\nc = 1.0\n", "prior.c"),
            (MINIMAL_FIT + '\n[prior]\nmode = "explicit"\n', "prior.density"),
            ("truncate_radius = -1.0\n" + MINIMAL_FIT, "truncate_radius"),
            (MINIMAL_FIT + "\n[solver]\nbogus = 1\n", "solver"),
            (MINIMAL_FIT + "\n[quadrature]\nrel_tol = 0.0\n", "quadrature"),
            (MINIMAL_FIT + '\n[output]\nplot_data = "yes"\n', "output.plot_data"),
        ],
    )
    def test_invalid_values(self, text: str, key: str) -> None:
        with pytest.raises(ConfigError) as exc_info:
            parse_scenario(text)
        assert exc_info.value.key == key

    def test_discrete_init_is_rejected(self) -> None:
        text = MINIMAL_FILTER.replace(
            '[system.init]\nkind = "gaussian"\nstd = 1.0',
            '[system.init]\nkind = "discrete"\natoms = [0.0]\nprobabilities = [1.0]',
        )
        with pytest.raises(ConfigError, match="cannot be discrete"):
            parse_scenario(text)

    def test_short_per_step_sequence(self) -> None:
        text = MINIMAL_FILTER.replace("f = 0.9", "f = [0.9, 0.8]")
        with pytest.raises(ConfigError) as exc_info:
            parse_scenario(text)
        assert exc_info.value.key == "system.f"

    def test_simulating_from_moments_needs_a_truth(self) -> None:
        text = MINIMAL_FILTER.replace(
            "observations = [0.1, -0.2, 0.3]", "steps = 3"
        ).replace(
            '[system.init]\nkind = "gaussian"\nstd = 1.0',
            '[system.init]\nkind = "moments"\nvalues = [1.0, 0.0, 1.0, 0.0, 3.0]',
        )
        with pytest.raises(ConfigError) as exc_info:
            parse_scenario(text)
        assert exc_info.value.key == "system.truth_init"


class TestParseDensity:
    """Tests for density records."""

    def test_mixture(self) -> None:
        record = {
            "kind": "mixture",
            "weights": [0.4, 0.6],
            "components": [
                {"kind": "gaussian", "mean": 1.0, "std": 1.0},
                {"kind": "student_t", "dof": 4.0, "location": -1.0, "scale": 2.0},
            ],
        }
        model = parse_density(record, "target")
        assert model == Mixture((0.4, 0.6), (Gaussian(1.0, 1.0), StudentT(4.0, -1.0, 2.0)))

    def test_other_kinds(self) -> None:
        assert parse_density({"kind": "moments", "values": [1.0, 0.0, 1.0]}, "t") == (
            MomentSequence((1.0, 0.0, 1.0))
        )
        assert parse_density(
            {"kind": "discrete", "atoms": [-1.0, 1.0], "probabilities": [0.5, 0.5]}, "t"
        ) == DiscreteNoise((-1.0, 1.0), (0.5, 0.5))
        exp_poly = parse_density({"kind": "exp_poly", "coeffs": [0.0, 0.0, 0.5]}, "t")
        assert isinstance(exp_poly, ExpPoly)

    @pytest.mark.parametrize(
        "record",
        [
            "gaussian",
            {"kind": "gaussian"},
            {"kind": "gaussian", "std": -1.0},
            {"kind": "gaussian", "std": "wide"},
            {
                "kind": "mixture",
                "weights": [0.5, 0.6],
                "components": [{"kind": "gaussian", "std": 1.0}] * 2,
            },
            {"kind": "mixture", "weights": [1.0], "components": []},
            {
                "kind": "mixture",
                "weights": [1.0],
                "components": [{"kind": "moments", "values": [1.0]}],
            },
            {"kind": "moments", "values": [1.0, 0.0]},
        ],
    )
    def test_invalid_records(self, record: object) -> None:
        with pytest.raises(ConfigError):
            parse_density(record, "target")


class TestDeepMerge:
    """Tests for _deep_merge."""

    def test_nested_override(self) -> None:
        merged = _deep_merge(DEFAULT_CONFIG, {"oracle": {"enabled": True}})
        assert merged["oracle"]["enabled"] is True
        assert merged["oracle"]["n_points"] == 4001
        assert DEFAULT_CONFIG["oracle"]["enabled"] is False


class TestScenarioLoading:
    """Tests for bundled and on-disk scenarios."""

    def test_bundled_names(self) -> None:
        names = bundled_scenarios()
        for expected in ("example1", "example7", "kalman", "discrete", "example6_compare"):
            assert expected in names

    @pytest.mark.parametrize("name", bundled_scenarios())
    def test_every_bundled_scenario_is_valid(self, name: str) -> None:
        config = load_scenario(name)
        assert config.name == name
        assert config.description

    def test_example1_contents(self) -> None:
        config = load_scenario("example1")
        assert config.mode == "fit"
        assert config.order == 6
        assert config.prior.c == 1.8
        assert config.reference_tv == 0.0331
        assert config.reference_q is not None and len(config.reference_q) == 7

    @pytest.mark.parametrize(
        "name", ["example1", "example2", "example3", "example4", "example5", "example6", "example7"]
    )
    def test_fit_examples_carry_reference_coefficients(self, name: str) -> None:
        """One published coefficient per power of q, constant term first."""
        config = load_scenario(name)
        assert config.reference_q is not None
        assert len(config.reference_q) == config.order + 1
        assert config.reference_q[-1] > 0

    def test_file_path_takes_precedence(self, tmp_path: Path) -> None:
        path = tmp_path / "example1.toml"
        path.write_text(MINIMAL_FIT)
        config = load_scenario(path)
        assert config.order == 4

    def test_missing_scenario(self) -> None:
        with pytest.raises(ConfigError, match="Bundled:"):
            load_scenario("no-such-scenario")


class TestOutputDirectory:
    """Tests for output directory precedence."""

    def test_config_value(self, clean_env: None) -> None:
        config = parse_scenario(MINIMAL_FIT + '\n[output]\ndir = "runs"\n')
        assert resolve_output_dir(config) == Path("runs")

    def test_environment_beats_config(
        self, clean_env: None, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        monkeypatch.setenv(OUT_DIR_ENV, "from-env")
        config = parse_scenario(MINIMAL_FIT)
        assert resolve_output_dir(config) == Path("from-env")

    def test_override_beats_environment(
        self, clean_env: None, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        monkeypatch.setenv(OUT_DIR_ENV, "from-env")
        config = parse_scenario(MINIMAL_FIT)
        assert resolve_output_dir(config, "cli") == Path("cli")
