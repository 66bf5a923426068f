"""Gridworld task suite: three-phase (and one five-phase) episodes.

Every task follows the same skeleton: an initial phase where the agent
can acquire information or cause an event (never rewarded), one or two
apple-collection distractor phases, and a final phase whose payoff
depends on what happened in the first. Rewards, layouts and phase
budgets follow the task definitions; durations and the distractor grid
are configurable so episodes scale down for desk-size experiments.

The agent occupies one cell of a walled canvas, has a facing direction,
and moves with six actions: forward, backward, turn left/right, and the
two combined forward-turn actions (move first, then rotate).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import grid as G

TASK_IDS = ("passive_match", "active_match", "key_to_door",
            "key_to_door_to_match", "two_negative_keys", "latent_info")

DISTRACTOR_VARIANTS = ("standard", "zero_reward", "fixed_count", "variable_reward")


@dataclass
class TaskConfig:
    task: str = "passive_match"
    p1_steps: int = 20
    p2_steps: int = 120
    p3_steps: int = 20
    p4_steps: int = 60
    p5_steps: int = 20
    distractor_variant: str = "standard"
    apple_prob: float = 0.3
    r_apple: float = 5.0
    distractor_size: int = 11
    cue_steps: int = 4
    latent_cue_steps: int = 1
    pad_correct_reward: float = 10.0
    pad_wrong_reward: float = 1.0
    door_goal_reward: float = 10.0
    latent_good_reward: float = 20.0
    latent_bad_reward: float = -10.0
    tnk_no_key_reward: float = -20.0
    tnk_blue_reward: float = -10.0
    tnk_red_reward: float = -1.0

    def __post_init__(self):
        if self.task not in TASK_IDS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.distractor_variant not in DISTRACTOR_VARIANTS:
            raise ValueError(f"unknown distractor variant {self.distractor_variant!r}")
        if not (0.0 <= self.apple_prob <= 1.0):
            raise ValueError("apple_prob outside [0, 1]")
        if self.distractor_variant == "variable_reward" and self.r_apple < 1:
            raise ValueError("variable_reward requires r_apple >= 1")
        for name in ("p1_steps", "p2_steps", "p3_steps", "p4_steps", "p5_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def num_phases(self) -> int:
        return 5 if self.task == "key_to_door_to_match" else 3

    def phase_budgets(self) -> list[int]:
        if self.num_phases == 5:
            return [self.p1_steps, self.p2_steps, self.p3_steps,
                    self.p4_steps, self.p5_steps]
        return [self.p1_steps, self.p2_steps, self.p3_steps]

    @property
    def max_episode_steps(self) -> int:
        return sum(self.phase_budgets())

    @property
    def free_distractor_cells(self) -> int:
        """Apple-eligible cells: the open square minus the spawn cell."""
        return self.distractor_size * self.distractor_size - 1

    def canvas_shape(self) -> tuple[int, int]:
        shapes = {"passive_match": [(1, 3), (4, 7)],
                  "active_match": [(3, 7), (4, 7)],
                  "key_to_door": [(3, 7), (1, 3)],
                  "key_to_door_to_match": [(4, 4), (1, 3), (4, 7)],
                  "two_negative_keys": [(3, 4), (1, 3)],
                  "latent_info": [(3, 5)]}[self.task]
        shapes = shapes + [(self.distractor_size, self.distractor_size)]
        rows = max(s[0] for s in shapes) + 2
        cols = max(s[1] for s in shapes) + 2
        return rows, cols

    def obs_shape(self) -> tuple[int, int, int]:
        h, w = self.canvas_shape()
        return (G.NUM_CHANNELS, h, w)


def default_task_config(task: str, **overrides) -> TaskConfig:
    """Per-task defaults: KtDtM halves its two distractors, Two Negative
    Keys has a short final phase."""
    cfg = TaskConfig(task=task)
    if task == "key_to_door_to_match":
        cfg = replace(cfg, p2_steps=60, p4_steps=60)
    if task == "two_negative_keys":
        cfg = replace(cfg, p3_steps=8)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def p2_variance(config: TaskConfig) -> float:
    """Closed-form variance of the collect-all distractor-phase return.

    standard:        n * p(1-p) * r^2   (binomial apple count, fixed value)
    zero_reward:     0
    fixed_count:     0                  (constant count, fixed value)
    variable_reward: n * (p*r - p^2)    (value r with probability 1/r)
    """
    n = config.free_distractor_cells
    p = config.apple_prob
    r = config.r_apple
    if config.distractor_variant == "standard":
        return n * p * (1.0 - p) * r * r
    if config.distractor_variant == "variable_reward":
        return n * (p * r - p * p)
    return 0.0


def expected_p2_return(config: TaskConfig) -> float:
    n = config.free_distractor_cells
    p = config.apple_prob
    r = config.r_apple
    if config.distractor_variant == "standard":
        return n * p * r
    if config.distractor_variant == "zero_reward":
        return 0.0
    if config.distractor_variant == "fixed_count":
        return round(n * p) * r
    return n * p  # variable_reward: E[value] = r * 1/r = 1 per apple


def _draw_apples(config: TaskConfig, cells: list[tuple[int, int]],
                 rng: np.random.Generator) -> dict[tuple[int, int], float]:
    variant = config.distractor_variant
    r = config.r_apple
    p = config.apple_prob
    apples: dict[tuple[int, int], float] = {}
    if variant == "fixed_count":
        count = round(len(cells) * p)
        idx = rng.choice(len(cells), size=count, replace=False)
        for i in idx:
            apples[cells[i]] = r
        return apples
    mask = rng.random(len(cells)) < p
    for cell, present in zip(cells, mask):
        if not present:
            continue
        if variant == "standard":
            apples[cell] = r
        elif variant == "zero_reward":
            apples[cell] = 0.0
        else:  # variable_reward
            apples[cell] = r if rng.random() < 1.0 / r else 0.0
    return apples


def simulate_collect_all_p2(config: TaskConfig, episodes: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Distractor returns under a collect-every-apple policy (no movement)."""
    cells = [(0, i) for i in range(config.free_distractor_cells)]
    totals = np.empty(episodes)
    for e in range(episodes):
        totals[e] = sum(_draw_apples(config, cells, rng).values())
    return totals


@dataclass
class _Phase:
    kind: str
    budget: int
    open_cells: set = field(default_factory=set)
    spawn: tuple[int, int] = (1, 1)
    spawn_dir: int = 0
    apples: dict = field(default_factory=dict)
    keys: dict = field(default_factory=dict)       # cell -> "black"|"red"|"blue"
    door: tuple[int, int] | None = None
    goal: tuple[int, int] | None = None
    pads: dict = field(default_factory=dict)       # cell -> color id
    squares: list = field(default_factory=list)    # (cell, color, mode)
    objects: dict = field(default_factory=dict)    # cell -> object id


class GridTaskEnv:
    """One episodic task instance; owns all mutable episode state."""

    def __init__(self, config: TaskConfig):
        self.config = config
        self.num_actions = G.NUM_ACTIONS
        self.canvas = config.canvas_shape()
        self.done = True

    # ------------------------------------------------------------------
    # episode setup

    def reset(self, rng: np.random.Generator):
        cfg = self.config
        self.rng = rng
        self.done = False
        self.phase_idx = 0
        self.step_in_phase = 0
        self.total_steps = 0
        self.phase_rewards = [0.0] * cfg.num_phases
        self.cues: dict[int, int] = {}
        self.has_key = False
        self.key_color: str | None = None
        self.tnk_goal_collected = False
        self.door_open = False
        self.pad_outcome: str | None = None
        self.obj_good: dict[int, bool] = {}
        self.obj_touched_p1: set[int] = set()
        self.target_color = 0
        self.lineup_colors: list[int] = []
        if cfg.task in ("passive_match", "active_match", "key_to_door_to_match"):
            chosen = rng.choice(G.PALETTE, size=4, replace=False)
            self.target_color = int(chosen[0])
            self.lineup_colors = [int(c) for c in chosen]
        if cfg.task == "latent_info":
            self.obj_textures = [int(t) for t in
                                 rng.choice(G.NUM_TEXTURES, size=3, replace=False)]
            self.obj_good = {i: bool(rng.random() < 0.5) for i in range(3)}
        self._load_phase(0)
        return self._build_obs()

    def _load_phase(self, idx: int) -> None:
        cfg = self.config
        task = cfg.task
        budgets = cfg.phase_budgets()
        if task == "key_to_door_to_match":
            kinds = ["ktdtm_p1", "distractor", "door_square", "distractor", "lineup"]
        elif task == "passive_match":
            kinds = ["passive_cue", "distractor", "lineup"]
        elif task == "active_match":
            kinds = ["seek_square", "distractor", "lineup"]
        elif task == "key_to_door":
            kinds = ["key_room", "distractor", "door_goal"]
        elif task == "two_negative_keys":
            kinds = ["tnk_keys", "distractor", "door_goal"]
        else:
            kinds = ["latent_explore", "distractor", "latent_collect"]
        self.phase_idx = idx
        self.step_in_phase = 0
        self.phase = self._build_phase(kinds[idx], budgets[idx])
        self.agent_pos = self.phase.spawn
        self.agent_dir = self.phase.spawn_dir
        self.door_open = False

    def _build_phase(self, kind: str, budget: int) -> _Phase:
        cfg = self.config
        rng = self.rng
        if kind == "distractor":
            s = cfg.distractor_size
            cells = G.open_rect(s, s)
            spawn = (s, 1 + (s - 1) // 2)
            apples = _draw_apples(cfg, sorted(cells - {spawn}), rng)
            return _Phase(kind, budget, cells, spawn, 0, apples=apples)
        if kind == "passive_cue":
            cells = G.open_rect(1, 3)
            return _Phase(kind, budget, cells, (1, 1), 1,
                          squares=[((1, 4), self.target_color, "always_cue")])
        if kind == "seek_square":
            cells = G.two_rooms()
            walls = self._adjacent_walls(cells)
            sq = walls[rng.integers(len(walls))]
            return _Phase(kind, budget, cells, (2, 2), int(rng.choice([0, 2])),
                          squares=[(sq, self.target_color, "los")])
        if kind == "key_room":
            cells = G.two_rooms()
            spawn = (1, 1)
            key_cell = self._random_cell(cells - {spawn})
            return _Phase(kind, budget, cells, spawn, 2, keys={key_cell: "black"})
        if kind == "ktdtm_p1":
            cells = G.open_rect(3, 4) | {(4, 1)}
            spawn = (4, 1)
            key_cell = self._random_cell(cells - {spawn})
            return _Phase(kind, budget, cells, spawn, 0, keys={key_cell: "black"})
        if kind == "tnk_keys":
            cells = G.open_rect(3, 4)
            corners = [(1, 4), (3, 4)]
            red = int(rng.integers(2))
            keys = {corners[red]: "red", corners[1 - red]: "blue"}
            return _Phase(kind, budget, cells, (2, 1), 1, keys=keys)
        if kind == "door_goal":
            return _Phase(kind, budget, G.open_rect(1, 3), (1, 1), 1,
                          door=(1, 2), goal=(1, 3))
        if kind == "door_square":
            return _Phase(kind, budget, G.open_rect(1, 3), (1, 1), 1,
                          door=(1, 2),
                          squares=[((1, 4), self.target_color, "los")])
        if kind == "lineup":
            cells = G.open_rect(4, 7)
            order = list(self.lineup_colors)
            self.rng.shuffle(order)
            squares = [((0, 1 + 2 * i), c, "always") for i, c in enumerate(order)]
            pads = {(1, 1 + 2 * i): c for i, c in enumerate(order)}
            return _Phase(kind, budget, cells, (4, 4), 0, squares=squares, pads=pads)
        if kind in ("latent_explore", "latent_collect"):
            cells = G.open_rect(3, 5)
            candidates = [(1, 2), (1, 4), (2, 3), (2, 5), (3, 2), (3, 4)]
            pos = rng.choice(len(candidates), size=3, replace=False)
            objects = {candidates[p]: i for i, p in enumerate(pos)}
            return _Phase(kind, budget, cells, (1, 1), 2, objects=objects)
        raise ValueError(f"unknown phase kind {kind!r}")

    def _adjacent_walls(self, cells: set) -> list[tuple[int, int]]:
        walls = set()
        for (r, c) in cells:
            for dr, dc in G.DIR_OFFSETS:
                n = (r + dr, c + dc)
                if n not in cells:
                    walls.add(n)
        return sorted(walls)

    def _random_cell(self, cells: set) -> tuple[int, int]:
        ordered = sorted(cells)
        return ordered[self.rng.integers(len(ordered))]

    # ------------------------------------------------------------------
    # stepping

    def step(self, action: int):
        if self.done:
            raise RuntimeError("step after episode termination")
        if not (0 <= action < G.NUM_ACTIONS):
            raise ValueError(f"unknown action {action}")
        for ch in list(self.cues):
            self.cues[ch] -= 1
            if self.cues[ch] <= 0:
                del self.cues[ch]
        phase_label = self.phase_idx + 1
        reward = 0.0
        events: list[str] = []
        reward += self._move(action, events)
        self.step_in_phase += 1
        self.total_steps += 1
        if not self.done and self.step_in_phase >= self.phase.budget:
            reward += self._end_phase(events)
        self.phase_rewards[phase_label - 1] += reward
        obs = self._build_obs()
        info = {"phase": phase_label, "events": events,
                "pos": self.agent_pos, "dir": self.agent_dir}
        return obs, reward, self.done, info

    def _move(self, action: int, events: list[str]) -> float:
        d = self.agent_dir
        move_dir = None
        turn = 0
        if action == G.FORWARD:
            move_dir = d
        elif action == G.BACKWARD:
            move_dir = (d + 2) % 4
        elif action == G.TURN_LEFT:
            turn = -1
        elif action == G.TURN_RIGHT:
            turn = 1
        elif action == G.FORWARD_LEFT:
            move_dir, turn = d, -1
        elif action == G.FORWARD_RIGHT:
            move_dir, turn = d, 1
        reward = 0.0
        if move_dir is not None:
            dr, dc = G.DIR_OFFSETS[move_dir]
            target = (self.agent_pos[0] + dr, self.agent_pos[1] + dc)
            if target == self.phase.door and not self.door_open:
                if self.has_key or self.key_color is not None:
                    self.door_open = True
                    events.append("door_open")
            elif target in self.phase.open_cells:
                self.agent_pos = target
                reward += self._enter_cell(target, events)
        self.agent_dir = (self.agent_dir + turn) % 4
        return reward

    def _enter_cell(self, cell, events: list[str]) -> float:
        cfg = self.config
        ph = self.phase
        reward = 0.0
        if cell in ph.apples:
            reward += ph.apples.pop(cell)
            events.append("apple")
        if cell in ph.keys:
            color = ph.keys[cell]
            if color == "black":
                del ph.keys[cell]
                self.has_key = True
                self.cues[G.CUE_BLACK] = cfg.cue_steps
                events.append("key")
            elif self.key_color is None:
                del ph.keys[cell]
                self.key_color = color
                self.cues[G.CUE_RED if color == "red" else G.CUE_BLUE] = cfg.cue_steps
                events.append(f"key_{color}")
        if cell in ph.objects:
            obj = ph.objects.pop(cell)
            if ph.kind == "latent_explore":
                self.obj_touched_p1.add(obj)
                good = self.obj_good[obj]
                self.cues[G.CUE_GREEN if good else G.CUE_RED] = cfg.latent_cue_steps
                events.append("object_touch")
            else:
                reward += cfg.latent_good_reward if self.obj_good[obj] \
                    else cfg.latent_bad_reward
                events.append("object_collect")
        if ph.goal is not None and cell == ph.goal:
            ph.goal = None
            if cfg.task == "two_negative_keys":
                self.tnk_goal_collected = True
                self._teleport_to_empty_distractor()
            else:
                reward += cfg.door_goal_reward
            events.append("goal")
        if cell in ph.pads:
            correct = ph.pads[cell] == self.target_color
            reward += cfg.pad_correct_reward if correct else cfg.pad_wrong_reward
            self.pad_outcome = "correct" if correct else "wrong"
            events.append("pad_correct" if correct else "pad_wrong")
            self.done = True
        return reward

    def _teleport_to_empty_distractor(self) -> None:
        """Two Negative Keys: after the goal, back to the (emptied) apple map."""
        s = self.config.distractor_size
        cells = G.open_rect(s, s)
        spawn = (s, 1 + (s - 1) // 2)
        keep = self.phase
        self.phase = _Phase(keep.kind, keep.budget, cells, spawn, 0)
        self.agent_pos = spawn
        self.agent_dir = 0

    def _end_phase(self, events: list[str]) -> float:
        cfg = self.config
        reward = 0.0
        if self.phase.kind == "tnk_keys" and self.key_color is None:
            self.cues[G.CUE_BLACK] = cfg.cue_steps
        if cfg.task == "two_negative_keys" and self.phase_idx == 2:
            if not self.tnk_goal_collected:
                reward += cfg.tnk_no_key_reward
            elif self.key_color == "blue":
                reward += cfg.tnk_blue_reward
            else:
                reward += cfg.tnk_red_reward
            events.append("terminal_penalty")
        if self.phase_idx + 1 >= cfg.num_phases:
            self.done = True
        else:
            self._load_phase(self.phase_idx + 1)
        return reward

    # ------------------------------------------------------------------
    # observation

    def _build_obs(self) -> np.ndarray:
        h, w = self.canvas
        obs = np.zeros((G.NUM_CHANNELS, h, w), dtype=np.float32)
        ph = self.phase
        for r in range(h):
            for c in range(w):
                if (r, c) not in ph.open_cells:
                    obs[G.WALL, r, c] = 1.0
        for cell in ph.apples:
            obs[G.APPLE, cell[0], cell[1]] = 1.0
        for cell, color in ph.keys.items():
            ch = {"black": G.KEY, "red": G.KEY_RED, "blue": G.KEY_BLUE}[color]
            obs[ch, cell[0], cell[1]] = 1.0
        if ph.door is not None and not self.door_open:
            obs[G.DOOR, ph.door[0], ph.door[1]] = 1.0
        if ph.goal is not None:
            obs[G.GOAL, ph.goal[0], ph.goal[1]] = 1.0
        for cell in ph.pads:
            obs[G.PAD, cell[0], cell[1]] = 1.0
        for cell, obj in ph.objects.items():
            obs[G.OBJ0 + self._texture(obj), cell[0], cell[1]] = 1.0
        blocked = {ph.door} if (ph.door is not None and not self.door_open) else set()
        for cell, color, mode in ph.squares:
            visible = mode in ("always", "always_cue")
            if mode == "los":
                hit = G.line_of_sight(ph.open_cells, blocked, self.agent_pos,
                                      self.agent_dir)
                visible = hit == cell
                if visible:
                    obs[G.COLOR0 + color] = 1.0  # observing the square: plane cue
            if mode == "always_cue":
                obs[G.COLOR0 + color] = 1.0
            if visible:
                obs[G.COLOR0 + color, cell[0], cell[1]] = 1.0
        obs[G.AGENT, self.agent_pos[0], self.agent_pos[1]] = 1.0
        obs[G.DIR0 + self.agent_dir, self.agent_pos[0], self.agent_pos[1]] = 1.0
        for ch in self.cues:
            obs[ch] = 1.0
        return obs

    def _texture(self, obj: int) -> int:
        if self.config.task == "latent_info":
            return self.obj_textures[obj]
        return obj

    def render_ascii(self) -> str:
        h, w = self.canvas
        ph = self.phase
        rows = []
        for r in range(h):
            line = []
            for c in range(w):
                cell = (r, c)
                ch = "#" if cell not in ph.open_cells else "."
                for sq_cell, color, _mode in ph.squares:
                    if cell == sq_cell:
                        ch = "%x" % color
                if cell in ph.apples:
                    ch = "a"
                if cell in ph.keys:
                    ch = ph.keys[cell][0]
                if cell == ph.door:
                    ch = "d" if self.door_open else "D"
                if ph.goal is not None and cell == ph.goal:
                    ch = "G"
                if cell in ph.pads:
                    ch = "_"
                if cell in ph.objects:
                    ch = "O"
                if cell == self.agent_pos:
                    ch = G.DIR_GLYPHS[self.agent_dir]
                line.append(ch)
            rows.append("".join(line))
        return "\n".join(rows)

    # ------------------------------------------------------------------

    def summary(self) -> dict:
        out = {f"p{i + 1}_score": s for i, s in enumerate(self.phase_rewards)}
        for i in range(len(self.phase_rewards), 5):
            out[f"p{i + 1}_score"] = 0.0
        out["episode_return"] = float(sum(self.phase_rewards))
        out["steps"] = self.total_steps
        out["key_p1"] = bool(self.has_key or self.key_color is not None)
        out["pad_outcome"] = self.pad_outcome or "none"
        out["p1_object_touches"] = len(self.obj_touched_p1)
        out["tnk_key"] = self.key_color or "none"
        return out
