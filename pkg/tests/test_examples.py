"""Reproduction tests for the bundled scenarios.

Feature: msfilter
Runs each bundled scenario end to end and checks the fitted surrogate's
total variation, the entropy bound, and the filter against its references.
These take seconds each; deselect with ``-m "not slow"``.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Any

import pytest

from msfilter.core.config import load_scenario
from msfilter.filtering.pipeline import run_scenario

pytestmark = pytest.mark.slow

# Reported distances with 1.5x headroom
TV_LIMITS = {
    "example1": 0.05,
    "example2": 0.04,
    "example3": 0.09,
    "example4": 0.112,
    "example5": 0.08,
    "example6": 0.144,
    "example7": 0.048,
}


def run(name: str, out_dir: Path, **overrides: Any) -> dict[str, Any]:
    config = load_scenario(name)
    if overrides:
        config = replace(config, **overrides)
    return run_scenario(config, out_dir).summary


class TestFits:
    """Tests for the density fitting scenarios."""

    @pytest.mark.parametrize(("name", "limit"), sorted(TV_LIMITS.items()))
    def test_total_variation_within_limit(self, name: str, limit: float, tmp_path: Path) -> None:
        summary = run(name, tmp_path)
        assert summary["residual"] <= 1e-6
        assert summary["tv"] <= limit

    def test_example1_coefficients(self, tmp_path: Path) -> None:
        reference = run("example1", tmp_path)["reference_q"]
        assert reference["sign_pattern_matches"]
        assert reference["max_relative_deviation"] <= 0.15

    @pytest.mark.parametrize("name", sorted(TV_LIMITS))
    def test_reference_coefficients_are_compared(self, name: str, tmp_path: Path) -> None:
        summary = run(name, tmp_path)
        reference = summary["reference_q"]
        assert len(reference["relative_deviation"]) == len(summary["q"])
        assert reference["max_relative_deviation"] >= 0.0

    def test_higher_order_fits_better(self, tmp_path: Path) -> None:
        order6 = run("example1", tmp_path / "6")["tv"]
        order8 = run("example2", tmp_path / "8")["tv"]
        assert order8 < order6


class TestBounds:
    """Tests for the entropy bound on the bundled fits."""

    @pytest.mark.parametrize(
        "name", ["example1", "example2", "example3", "example4", "example5", "example6"]
    )
    def test_bound_covers_measured_distance(self, name: str, tmp_path: Path) -> None:
        bound = run(name, tmp_path)["bound"]
        assert bound["assumptions_hold"]
        assert bound["holds"]
        assert bound["measured_tv"] <= bound["bound_value"] + 1e-3
        entropy_floor = max(bound["entropy_surrogate"], bound["entropy_truth"])
        assert bound["entropy_maxent"] >= entropy_floor - 1e-6

    def test_heavy_tails_are_flagged(self, tmp_path: Path) -> None:
        summary = run("example7", tmp_path)
        assert summary["moment_provenance"]["kind"] == "truncated"
        assert summary["bound"]["assumptions_hold"] is False


class TestFilters:
    """Tests for the filtering scenarios."""

    def test_kalman_scenario(self, tmp_path: Path) -> None:
        kalman = run("kalman", tmp_path)["kalman"]
        assert kalman["max_mean_error"] <= 1e-5
        assert kalman["max_variance_error"] <= 1e-5

    def test_discrete_noise_tracks_the_oracle(self, tmp_path: Path) -> None:
        gaps = {
            order: run("discrete", tmp_path / str(order), order=order)["oracle"]["max_moment_gap"]
            for order in (4, 6, 8)
        }
        assert gaps[8] <= 0.01
        assert gaps[6] <= gaps[4] + 1e-9
        assert gaps[8] <= gaps[6] + 1e-9

    def test_compare_starts_from_the_fitted_surrogate(self, tmp_path: Path) -> None:
        oracle = run("example6_compare", tmp_path)["oracle"]
        assert oracle["tv"][0] <= 0.144
