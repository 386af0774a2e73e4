"""Synthetic worker and panel tracks.

Profiles:

* ``linear``: constant speed and heading.
* ``turning``: constant speed with a constant turn rate per frame.
* ``workstation``: alternating dwell and walk segments whose stopped share
  is set by ``stop_target``.
* ``panel``: a moving panel per scene; workers walk on their own heading
  while observed and then swing onto the panel's heading.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .trackio import T_OBS, T_PRED, AgentClass, AgentTrack, TrackRecord, WindowSample

PROFILES = ("linear", "turning", "workstation", "panel")


def _heading_track(start, headings, step):
    steps = step * np.column_stack([np.cos(headings), np.sin(headings)])
    return np.vstack([start, start + np.cumsum(steps, axis=0)])


def linear_track(start, heading, speed, n, fps):
    return _heading_track(np.asarray(start, float), np.full(n - 1, heading), speed / fps)


def turning_track(start, heading, speed, turn_rate, n, fps):
    headings = heading + turn_rate * np.arange(n - 1)
    return _heading_track(np.asarray(start, float), headings, speed / fps)


def speed_fixture(mean_speed, stop_share, n_pairs=100, fps=2.5, stop_speed=0.0,
                  thresh=0.4, rng=None):
    """Track whose consecutive-pair speeds hit a target mean and stopped share.

    ``round(stop_share * n_pairs)`` pairs move at ``stop_speed`` (below
    ``thresh``); the rest share the speed that makes the mean exact.
    """
    rng = rng or np.random.default_rng(0)
    n_stop = int(round(stop_share * n_pairs))
    n_move = n_pairs - n_stop
    if n_move == 0:
        if abs(mean_speed - stop_speed) > 1e-12:
            raise ConfigError("an all-stopped track cannot reach that mean speed")
        move_speed = stop_speed
    else:
        move_speed = (mean_speed * n_pairs - n_stop * stop_speed) / n_move
    if stop_speed >= thresh or (n_move and move_speed < thresh):
        raise ConfigError(f"cannot build a track with mean {mean_speed} m/s and "
                          f"{stop_share:.0%} stopped at threshold {thresh}")
    speeds = np.array([stop_speed] * n_stop + [move_speed] * n_move)
    speeds = speeds[rng.permutation(n_pairs)]
    headings = rng.uniform(-math.pi, math.pi, size=n_pairs)
    steps = (speeds / fps)[:, None] * np.column_stack([np.cos(headings), np.sin(headings)])
    return np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])


def workstation_track(n, fps, rng, stop_target=0.7, walk_speed=1.0, stop_speed=0.05):
    """Dwell/walk segments; close to ``stop_target`` of pair speeds are stops."""
    n_pairs = n - 1
    n_stop = int(round(stop_target * n_pairs))
    flags = np.zeros(n_pairs, dtype=bool)
    # walk segments of 2-6 pairs dropped at random offsets until the walk budget is met
    remaining = n_pairs - n_stop
    while remaining > 0:
        length = min(remaining, int(rng.integers(2, 7)))
        start = int(rng.integers(0, n_pairs - length + 1))
        fresh = ~flags[start:start + length]
        flags[start:start + length] = True
        remaining -= int(fresh.sum())
    speeds = np.where(flags, walk_speed, stop_speed)
    heading = rng.uniform(-math.pi, math.pi)
    headings = heading + np.cumsum(rng.normal(0.0, 0.3, size=n_pairs))
    steps = (speeds / fps)[:, None] * np.column_stack([np.cos(headings), np.sin(headings)])
    return np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])


def _records(tracks, frame0=0):
    out = []
    for cls, ident, xy in tracks:
        for k, (x, y) in enumerate(xy):
            out.append(TrackRecord(frame0 + k, cls, ident, float(x), float(y)))
    out.sort(key=lambda r: (r.frame, r.cls != AgentClass.WORKER, r.id))
    return out


def synth_scene(profile, n_agents=3, n_frames=40, seed=0, fps=2.5, speed=1.0, noise=0.0,
                stop_target=0.7, turn_rate=0.15, area=10.0):
    """Records for one scene of ``n_agents`` workers (plus a panel for ``panel``)."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {PROFILES}")
    if n_frames < 2 or n_agents < 1:
        raise ConfigError("a scene needs at least 2 frames and 1 agent")
    rng = np.random.default_rng(seed)
    tracks = []
    if profile == "panel":
        return _records(_panel_scene(rng, n_agents, n_frames, fps, speed, noise, area))
    for ident in range(1, n_agents + 1):
        start = rng.uniform(0, area, size=2)
        heading = rng.uniform(-math.pi, math.pi)
        if profile == "linear":
            xy = linear_track(start, heading, speed, n_frames, fps)
        elif profile == "turning":
            rate = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0) * turn_rate
            xy = turning_track(start, heading, speed, rate, n_frames, fps)
        else:
            xy = start + workstation_track(n_frames, fps, rng, stop_target, speed)
        if noise:
            xy = xy + rng.normal(0.0, noise, size=xy.shape)
        tracks.append((AgentClass.WORKER, ident, xy))
    return _records(tracks)


def _panel_scene(rng, n_workers, n_frames, fps, speed, noise, area, t_obs=T_OBS,
                 panel_speed=0.6):
    heading = rng.uniform(-math.pi, math.pi)
    panel = linear_track(rng.uniform(0, area, size=2), heading, panel_speed, n_frames, fps)
    tracks = [(AgentClass.OBSTACLE, 1, panel)]
    for ident in range(1, n_workers + 1):
        own = rng.uniform(-math.pi, math.pi)
        headings = np.where(np.arange(n_frames - 1) < t_obs - 1, own, heading)
        xy = _heading_track(rng.uniform(0, area, size=2), headings, speed / fps)
        tracks.append((AgentClass.WORKER, ident, xy))
    if noise:
        tracks = [(c, i, xy + rng.normal(0.0, noise, size=xy.shape)) for c, i, xy in tracks]
    return tracks


def synth_windows(n_windows, profiles=("linear", "turning"), seed=0, noise=0.05,
                  max_agents=3, fps=2.5, speed_range=(0.6, 1.4), t_obs=T_OBS, t_pred=T_PRED):
    """One-window scenes cycling through ``profiles``.

    Each scene is exactly ``t_obs + t_pred`` frames long, so it yields one
    window; the scene name starts with its profile.
    """
    rng = np.random.default_rng(seed)
    span = t_obs + t_pred
    windows = []
    for k in range(n_windows):
        profile = profiles[k % len(profiles)]
        n_agents = int(rng.integers(1, max_agents + 1))
        speed = float(rng.uniform(*speed_range))
        recs = synth_scene(profile, n_agents, span, seed=int(rng.integers(2**31)), fps=fps,
                           speed=speed, noise=noise)
        by_agent = {}
        for r in recs:
            by_agent.setdefault((r.cls, r.id), []).append((r.pos_x, r.pos_y))
        agents, obstacles = [], []
        for (cls, ident), pts in sorted(by_agent.items(), key=lambda kv: (kv[0][0] != AgentClass.WORKER, kv[0][1])):
            xy = np.asarray(pts)
            track = AgentTrack(cls, ident, xy[:t_obs], xy[t_obs:])
            (agents if cls == AgentClass.WORKER else obstacles).append(track)
        windows.append(WindowSample(k, tuple(agents), tuple(obstacles), k * span,
                                    f"{profile}-{k:05d}"))
    return windows
