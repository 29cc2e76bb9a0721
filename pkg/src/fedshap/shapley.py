"""Exact Shapley attribution by coalition enumeration.

Coalitions are encoded as integers: bit ``j`` set means player ``j`` is in
the coalition. The engine evaluates the value function once for each of the
``2**P`` coalitions and derives every player's attribution from that table.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import EnumerationCapError

SHAPLEY = "shapley"
UNIFORM_AVERAGE = "uniform_average"
DEFAULT_CAP = 20
BRUTE_FORCE_CAP = 8
MASK_CHUNK = 256


@dataclass(frozen=True)
class CoalitionMask:
    bits: tuple[bool, ...]

    @classmethod
    def from_int(cls, value: int, players: int) -> "CoalitionMask":
        return cls(tuple(bool(value >> j & 1) for j in range(players)))

    def to_int(self) -> int:
        return sum(1 << j for j, b in enumerate(self.bits) if b)

    def __len__(self) -> int:
        return len(self.bits)

    def members(self) -> list[int]:
        return [j for j, b in enumerate(self.bits) if b]


@dataclass
class ShapleyGame:
    """A cooperative game over ``player_count`` players.

    ``value_fn`` maps a :class:`CoalitionMask` to a real number. If
    ``batch_fn`` is given it is used instead: it receives a boolean
    ``(m, P)`` array of coalitions and returns ``m`` values.
    """

    player_count: int
    value_fn: Callable[[CoalitionMask], float] | None = None
    weighting_mode: str = SHAPLEY
    batch_fn: Callable[[np.ndarray], np.ndarray] | None = None
    player_names: Sequence[str] | None = None

    def __post_init__(self):
        if self.value_fn is None and self.batch_fn is None:
            raise ValueError("a game needs value_fn or batch_fn")
        if self.weighting_mode not in (SHAPLEY, UNIFORM_AVERAGE):
            raise ValueError(f"unknown weighting mode {self.weighting_mode!r}")
        if self.player_count < 1:
            raise ValueError("a game needs at least one player")

    def value(self, mask: CoalitionMask) -> float:
        if self.value_fn is not None:
            return float(self.value_fn(mask))
        return float(self.batch_fn(np.array([mask.bits], dtype=bool))[0])


@dataclass
class ShapleyReport:
    attributions: np.ndarray
    base_value: float
    full_value: float
    player_names: list[str] = field(default_factory=list)
    weighting_mode: str = SHAPLEY

    def __post_init__(self):
        self.attributions = np.asarray(self.attributions, dtype=np.float64)
        if not self.player_names:
            self.player_names = [f"player_{j}" for j in range(len(self.attributions))]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.player_names, self.attributions.tolist()))

    def __getitem__(self, name: str) -> float:
        return float(self.attributions[self.player_names.index(name)])


def masked_instance(x, ref, on_columns) -> np.ndarray:
    """Copy of ``x`` with every column outside ``on_columns`` replaced by ``ref``."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(getattr(ref, "values", ref), dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError("instance and reference lengths differ")
    on = list(on_columns)
    if any(j < 0 or j >= len(x) for j in on):
        raise IndexError(f"column index out of range 0..{len(x) - 1}")
    out = ref.copy()
    out[on] = x[on]
    return out


def coalition_weight(s: int, players: int) -> float:
    """``s! (P - s - 1)! / P!`` evaluated exactly, then rounded once."""
    if not 0 <= s < players:
        raise ValueError(f"coalition size must satisfy 0 <= s < P, got s={s}, P={players}")
    return float(Fraction(math.factorial(s) * math.factorial(players - s - 1), math.factorial(players)))


def all_masks(players: int) -> np.ndarray:
    """Boolean ``(2**P, P)`` array; row ``i`` is the coalition encoded by integer ``i``."""
    ints = np.arange(1 << players, dtype=np.int64)
    return ((ints[:, None] >> np.arange(players)) & 1).astype(bool)


def value_table(game: ShapleyGame, cache: dict[int, float] | None = None) -> np.ndarray:
    """Evaluate ``game`` on every coalition, reusing and filling ``cache``."""
    P = game.player_count
    n = 1 << P
    cache = {} if cache is None else cache
    todo = [i for i in range(n) if i not in cache]
    if game.batch_fn is not None and todo:
        masks = all_masks(P)
        for start in range(0, len(todo), MASK_CHUNK):
            chunk = todo[start : start + MASK_CHUNK]
            vals = np.asarray(game.batch_fn(masks[chunk]), dtype=np.float64)
            if vals.shape != (len(chunk),):
                raise ValueError("batch_fn returned the wrong number of values")
            cache.update(zip(chunk, vals.tolist()))
    else:
        for i in todo:
            cache[i] = float(game.value_fn(CoalitionMask.from_int(i, P)))
    table = np.array([cache[i] for i in range(n)], dtype=np.float64)
    if not np.all(np.isfinite(table)):
        raise ValueError("value function returned a non-finite value")
    return table


def attributions_from_table(table: np.ndarray, players: int, mode: str = SHAPLEY) -> np.ndarray:
    """Per-player attribution from a full coalition value table."""
    ints = np.arange(1 << players, dtype=np.int64)
    sizes = np.array([bin(i).count("1") for i in range(1 << players)])
    if mode == SHAPLEY:
        weights = np.array([coalition_weight(s, players) for s in range(players)])
    elif mode == UNIFORM_AVERAGE:
        weights = np.full(players, 1.0 / (1 << (players - 1)))
    else:
        raise ValueError(f"unknown weighting mode {mode!r}")
    phi = np.empty(players)
    for j in range(players):
        bit = 1 << j
        without = ints[(ints & bit) == 0]
        diffs = table[without | bit] - table[without]
        phi[j] = np.dot(weights[sizes[without]], diffs)
    return phi


def shapley_values(
    game: ShapleyGame,
    cap: int = DEFAULT_CAP,
    cache: dict[int, float] | None = None,
) -> ShapleyReport:
    """Exact attributions for every player of ``game``.

    In ``shapley`` mode each marginal contribution ``v(S + j) - v(S)`` is
    weighted by ``|S|! (P - |S| - 1)! / P!``. In ``uniform_average`` mode
    the contributions over all ``2**(P-1)`` coalitions are averaged
    unweighted.
    """
    P = game.player_count
    if P > cap:
        raise EnumerationCapError(f"{P} players exceeds the enumeration cap of {cap}")
    table = value_table(game, cache)
    phi = attributions_from_table(table, P, game.weighting_mode)
    names = list(game.player_names) if game.player_names else []
    return ShapleyReport(phi, float(table[0]), float(table[-1]), names, game.weighting_mode)


def brute_force_shapley(game: ShapleyGame) -> np.ndarray:
    """Average marginal contribution over all ``P!`` player orderings."""
    P = game.player_count
    if P > BRUTE_FORCE_CAP:
        raise EnumerationCapError(f"brute force supports at most {BRUTE_FORCE_CAP} players")
    memo: dict[frozenset, float] = {}

    def v(members: frozenset) -> float:
        if members not in memo:
            memo[members] = game.value(CoalitionMask(tuple(j in members for j in range(P))))
        return memo[members]

    totals = [Fraction(0)] * P
    count = 0
    for order in itertools.permutations(range(P)):
        seen: frozenset = frozenset()
        for j in order:
            after = seen | {j}
            totals[j] += Fraction(v(after)) - Fraction(v(seen))
            seen = after
        count += 1
    return np.array([float(t / count) for t in totals])


class ModelValueFunction:
    """Value function ``mask -> predict(x masked to the on-players' columns)``.

    Calling it with a :class:`CoalitionMask` runs ``predict`` on a single
    masked instance. :meth:`batch` evaluates many coalitions at once when a
    vectorised ``predict_batch`` is supplied.
    """

    def __init__(
        self,
        predict: Callable[[np.ndarray], float],
        x,
        ref,
        player_to_columns: Mapping[int, Sequence[int]] | Sequence[Sequence[int]],
        predict_batch: Callable[[np.ndarray], np.ndarray] | None = None,
    ):
        if isinstance(player_to_columns, Mapping):
            groups = [list(player_to_columns[j]) for j in range(len(player_to_columns))]
        else:
            groups = [list(g) for g in player_to_columns]
        seen: set[int] = set()
        for g in groups:
            if seen & set(g):
                raise ValueError("player column sets overlap")
            seen |= set(g)
        self.x = np.asarray(x, dtype=np.float64)
        self.ref = np.asarray(getattr(ref, "values", ref), dtype=np.float64)
        if seen and max(seen) >= len(self.x):
            raise IndexError("player column index out of range")
        self.groups = groups
        self.predict = predict
        self.predict_batch = predict_batch
        # (P, p) incidence matrix: which columns each player switches on
        self.incidence = np.zeros((len(groups), len(self.x)), dtype=bool)
        for j, g in enumerate(groups):
            self.incidence[j, g] = True
        self.calls = 0

    @property
    def player_count(self) -> int:
        return len(self.groups)

    def columns_on(self, bits) -> list[int]:
        return [c for j, b in enumerate(bits) if b for c in self.groups[j]]

    def __call__(self, mask: CoalitionMask) -> float:
        self.calls += 1
        return float(self.predict(masked_instance(self.x, self.ref, self.columns_on(mask.bits))))

    def column_masks(self, masks: np.ndarray) -> np.ndarray:
        """Boolean ``(m, p)`` array of switched-on columns for ``(m, P)`` coalitions."""
        return (masks.astype(np.uint8) @ self.incidence.astype(np.uint8)) > 0

    def batch(self, masks: np.ndarray) -> np.ndarray:
        self.calls += len(masks)
        cols = self.column_masks(masks)
        if self.predict_batch is not None:
            return np.asarray(self.predict_batch(np.where(cols, self.x, self.ref)))
        return np.array([self.predict(row) for row in np.where(cols, self.x, self.ref)])


def model_value_fn(predict, x, ref, player_to_columns, predict_batch=None) -> ModelValueFunction:
    return ModelValueFunction(predict, x, ref, player_to_columns, predict_batch)
