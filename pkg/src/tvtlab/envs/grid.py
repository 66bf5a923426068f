"""Observation channels, directions and geometry helpers for the tasks.

Observations are binary (C, H, W) tensors on a fixed per-task canvas.
Entity channels mark cells; color layers mark the colored wall squares;
event-cue layers are whole-plane overlays shown for a configured number
of steps after the triggering event.
"""

from __future__ import annotations

import numpy as np

# entity channels
WALL = 0
APPLE = 1
KEY = 2
KEY_RED = 3
KEY_BLUE = 4
DOOR = 5
GOAL = 6
PAD = 7
OBJ0 = 8
NUM_TEXTURES = 6
AGENT = OBJ0 + NUM_TEXTURES            # 14
DIR0 = AGENT + 1                       # 15..18, one-hot at the agent cell
COLOR0 = DIR0 + 4                      # 19..34, 16-entry palette
PALETTE = 16
CUE_BLACK = COLOR0 + PALETTE           # 35
CUE_RED = CUE_BLACK + 1
CUE_BLUE = CUE_BLACK + 2
CUE_GREEN = CUE_BLACK + 3
NUM_CHANNELS = CUE_BLACK + 4           # 39

# orientations: N, E, S, W
DIR_OFFSETS = ((-1, 0), (0, 1), (1, 0), (0, -1))
DIR_GLYPHS = "^>v<"

# actions
FORWARD, BACKWARD, TURN_LEFT, TURN_RIGHT, FORWARD_LEFT, FORWARD_RIGHT = range(6)
NUM_ACTIONS = 6
ACTION_NAMES = ("forward", "backward", "turn_left", "turn_right",
                "forward_left", "forward_right")


def open_rect(rows: int, cols: int, origin=(1, 1)) -> set[tuple[int, int]]:
    r0, c0 = origin
    return {(r0 + r, c0 + c) for r in range(rows) for c in range(cols)}


def two_rooms() -> set[tuple[int, int]]:
    """Two 3x3 rooms joined by a single-cell corridor (3x7 footprint)."""
    cells = open_rect(3, 3, (1, 1)) | open_rect(3, 3, (1, 5))
    cells.add((2, 4))
    return cells


def line_of_sight(open_cells: set[tuple[int, int]], blocked: set[tuple[int, int]],
                  pos: tuple[int, int], direction: int) -> tuple[int, int] | None:
    """First non-open cell hit by a ray from pos; None if blocked en route.

    ``blocked`` holds open cells that stop sight anyway (closed doors).
    """
    dr, dc = DIR_OFFSETS[direction]
    r, c = pos
    for _ in range(256):
        r += dr
        c += dc
        if (r, c) in blocked:
            return None
        if (r, c) not in open_cells:
            return (r, c)
    return None
