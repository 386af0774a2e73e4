import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajgatformer.analysis import (
    PlotKind, PlotSpec, emit_plot, mean_walking_speed, moving_fraction, speed_stats, stop_fraction,
)
from trajgatformer.errors import ConfigError, PreconditionError
from trajgatformer.synth import speed_fixture, synth_scene
from trajgatformer.trackio import Scene


def test_speed_hand_values():
    track = np.array([[0.0, 0.0], [0.4, 0.0], [0.4, 0.0]])
    assert mean_walking_speed(track, fps=2.5) == pytest.approx(0.5)
    assert stop_fraction(track, fps=2.5) == 0.5
    with pytest.raises(PreconditionError):
        mean_walking_speed(track[:1])


def test_threshold_is_strict():
    # exactly 0.4 m/s counts as moving
    track = np.array([[0.0, 0.0], [0.16, 0.0]])
    assert stop_fraction(track, fps=2.5) == 0.0
    assert moving_fraction(track, fps=2.5) == 1.0


@pytest.mark.parametrize("mean,share", [(0.93, 0.0), (0.93, 0.2), (1.2, 0.71), (2.0, 0.75),
                                        (1.0, 0.59)])
def test_fixtures_hit_targets(mean, share):
    track = speed_fixture(mean, share)
    assert abs(mean_walking_speed(track) - mean) < 1e-6
    assert abs(stop_fraction(track) - share) < 1e-6


def test_unreachable_fixture_is_refused():
    with pytest.raises(ConfigError):
        speed_fixture(0.2, 0.1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_stop_and_moving_fractions_partition(seed, n):
    track = np.random.default_rng(seed).normal(scale=0.3, size=(n, 2)).cumsum(axis=0)
    assert stop_fraction(track) + moving_fraction(track) == pytest.approx(1.0, abs=1e-15)


def test_speed_stats_per_agent():
    scene = Scene(tuple(synth_scene("workstation", n_agents=3, n_frames=200, seed=1)), 2.5)
    stats = speed_stats(scene)
    assert [a.id for a in stats.agents] == [1, 2, 3]
    assert all(abs(a.stop_fraction - 0.7) < 0.01 for a in stats.agents)
    assert '"threshold": 0.4' in stats.to_json()


@pytest.mark.parametrize("kind", list(PlotKind))
def test_emit_plot_writes_svg_and_csv(tmp_path, kind):
    series = {"a": [[1, 0.5], [2, 0.7]], "b": [[1, 0.2], [2, 0.9]]}
    out = emit_plot(PlotSpec(kind, series, tmp_path / "fig", "x", "y", "t"))
    assert out.suffix == ".svg" and out.read_text().lstrip().startswith("<?xml")
    rows = list(csv.reader(out.with_suffix(".csv").open()))
    assert rows[0] == ["series", "x", "y"] and len(rows) == 5


def test_emit_plot_rejects_empty(tmp_path):
    with pytest.raises(PreconditionError):
        emit_plot(PlotSpec(PlotKind.LOSS_CURVE, {"a": []}, tmp_path / "f"))
