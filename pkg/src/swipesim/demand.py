"""Demand-based video selection.

For the playlist [V_0 playing, V_1, ...] with buffer edges tau_i and
playheads t_i, the demand of a video is the probability that playback is
inside its un-buffered region when the buffers run out ahead of the user:

    demand_0 = P(T_0 > tau_0 | T_0 > t_0)
    demand_i = (1 - sum_{k<i} demand_k) * P(T_i > tau_i)      for i >= 1

with T_i the watch time of video i. The selector downloads for the eligible
video with the highest demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from .media import EPS_S, VideoState
from .watchtime import weibull_survival

# Probability that the viewer is still watching `video` past media time `x`.
SurvivalFn = Callable[[VideoState, float], float]


def fitted_survival(video: VideoState, x: float) -> float:
    """Survival under the video's fused watch-time estimate."""
    if video.watch_params is None:
        raise ValueError(f"video {video.meta.video_id} has no watch-time params")
    return weibull_survival(video.watch_params, x)


def uniform_survival(video: VideoState, x: float) -> float:
    """Survival under a uniform watch-time assumption over [0, duration]."""
    d = video.meta.duration_s
    if x <= 0.0:
        return 1.0
    return max(0.0, 1.0 - min(x, d) / d)


@dataclass
class DemandVector:
    """Per-video demands plus the selection outcome.

    `sleep` is true exactly when no video was selected. `playing_degenerate`
    marks a conditional with zero denominator for the playing video, which
    zeroes its demand and makes it ineligible.
    """

    demands: tuple[float, ...]
    playing_degenerate: bool = False
    selected: int | None = None
    sleep: bool = True
    eligible: tuple[int, ...] = field(default_factory=tuple)


def demand_playing(video: VideoState, survival: SurvivalFn = fitted_survival) -> tuple[float, bool]:
    """Demand of the playing video: P(T > tau | T > t).

    Returns (demand, degenerate). The conditioning survival at the playhead
    can be zero when the playhead sits past the distribution's support; the
    demand is then 0 and the video flagged degenerate.
    """
    denom = survival(video, video.play_pos_s)
    if denom <= 0.0:
        return 0.0, True
    num = survival(video, video.buffered_s)
    return min(num / denom, 1.0), False


def compute_demands(
    playlist: Sequence[VideoState],
    survival: SurvivalFn = fitted_survival,
) -> DemandVector:
    """Demand of every playlist entry at the current buffer edges.

    Demands are non-negative and sum to at most 1; the leftover mass is the
    probability that every queued video gets swiped inside its buffer.
    """
    if len(playlist) == 0:
        return DemandVector(demands=(), playing_degenerate=False)
    d0, degenerate = demand_playing(playlist[0], survival)
    demands = [d0]
    remaining = 1.0 - d0
    for video in list(playlist)[1:]:
        s = survival(video, video.buffered_s)
        demands.append(remaining * s)
        remaining *= 1.0 - s
    return DemandVector(demands=tuple(demands), playing_degenerate=degenerate)


def select_video(
    playlist: Sequence[VideoState],
    dv: DemandVector,
    b_max_s: float,
    min_headroom_s: float = 0.0,
) -> int | None:
    """Pick the eligible video with the highest demand.

    A video is eligible when its buffer-ahead is below `b_max_s` and it is
    not fully buffered; a degenerate playing video is skipped. Ties resolve
    to the lowest index. Returns None (and marks the vector asleep) when
    nothing is eligible.

    `min_headroom_s` tightens the cap check so a selection always leaves
    room for a task of at least that length; without it, a video hovering
    at the cap soaks up round-trips on near-empty top-ups.
    """
    best: int | None = None
    eligible: list[int] = []
    for i, video in enumerate(playlist):
        if i == 0 and dv.playing_degenerate:
            continue
        if video.buffer_ahead_s >= b_max_s - min_headroom_s:
            continue
        if video.remaining_download_s <= EPS_S:
            continue
        eligible.append(i)
        if best is None or dv.demands[i] > dv.demands[best]:
            best = i
    dv.eligible = tuple(eligible)
    dv.selected = best
    dv.sleep = best is None
    return best
