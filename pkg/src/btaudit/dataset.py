"""Pairwise comparison records and their directed two-row block encoding.

Every raw comparison ``b`` between ``first`` and ``second`` becomes two
directed rows, ``2b`` (first vs second) and ``2b + 1`` (second vs first):

* first wins  -> ``(first, second, 1)``, ``(second, first, 0)``
* second wins -> ``(first, second, 0)``, ``(second, first, 1)``
* tie         -> ``(first, second, 1)``, ``(second, first, 1)``

A block is the atomic unit of every perturbation. Dropping sets both row
weights to zero so block ids stay stable.
"""

from __future__ import annotations

import csv
import enum
import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ActionError, NotFlippableError, ParseError, ValidationError


class Outcome(enum.IntEnum):
    FIRST_WINS = 0
    SECOND_WINS = 1
    TIE = 2

    @property
    def token(self) -> str:
        return _OUTCOME_TOKENS[self]


_OUTCOME_TOKENS = {
    Outcome.FIRST_WINS: "model_a",
    Outcome.SECOND_WINS: "model_b",
    Outcome.TIE: "tie",
}

_TOKEN_TO_OUTCOME = {
    "model_a": Outcome.FIRST_WINS,
    "model_b": Outcome.SECOND_WINS,
    "tie": Outcome.TIE,
    "tie (bothbad)": Outcome.TIE,
    "first_wins": Outcome.FIRST_WINS,
    "second_wins": Outcome.SECOND_WINS,
}

# (first, second, outcome) column names; the arena aliases come second
_COLUMN_SETS = (
    ("first_player", "second_player", "outcome"),
    ("model_a", "model_b", "winner"),
)

# forward / reverse row outcome per block outcome
_ROW_Y = {
    Outcome.FIRST_WINS: (1.0, 0.0),
    Outcome.SECOND_WINS: (0.0, 1.0),
    Outcome.TIE: (1.0, 1.0),
}


@dataclass(frozen=True)
class RawComparison:
    first_player: str
    second_player: str
    outcome: Outcome

    def __post_init__(self) -> None:
        if self.first_player == self.second_player:
            raise ValidationError(f"self-comparison of {self.first_player!r} is not allowed")
        if not isinstance(self.outcome, Outcome):
            raise ValidationError(f"unknown outcome {self.outcome!r}")


def parse_outcome(token: str, line: int | None = None) -> Outcome:
    try:
        return _TOKEN_TO_OUTCOME[token.strip().lower()]
    except KeyError:
        raise ParseError(f"unknown outcome token {token!r}", line) from None


def _make_record(a: str, b: str, token: str, line: int) -> RawComparison:
    a, b = a.strip(), b.strip()
    if not a or not b:
        raise ParseError("empty player name", line)
    outcome = parse_outcome(token, line)
    if a == b:
        raise ValidationError(f"line {line}: self-comparison of {a!r} is not allowed")
    return RawComparison(a, b, outcome)


def _resolve_columns(names: Sequence[str], line: int) -> tuple[int, int, int]:
    stripped = [n.strip() for n in names]
    for cols in _COLUMN_SETS:
        if all(c in stripped for c in cols):
            return tuple(stripped.index(c) for c in cols)  # type: ignore[return-value]
    raise ParseError(
        f"header must contain {', '.join(_COLUMN_SETS[0])} or {', '.join(_COLUMN_SETS[1])}", line
    )


def load(path: str | Path, format: str | None = None) -> list[RawComparison]:
    """Read raw comparisons from a CSV or JSONL file, in file order.

    ``format`` defaults to the file extension (``.jsonl`` / ``.json`` select
    JSONL, anything else CSV).
    """
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix.lower() in (".jsonl", ".json", ".ndjson") else "csv"
    if format == "csv":
        return _load_csv(path)
    if format == "jsonl":
        return _load_jsonl(path)
    raise ValidationError(f"unknown input format {format!r}")


def _load_csv(path: Path) -> list[RawComparison]:
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", 1)
        ia, ib, io = _resolve_columns(header, 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, got {len(row)}", line)
            records.append(_make_record(row[ia], row[ib], row[io], line))
    return records


def _load_jsonl(path: Path) -> list[RawComparison]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", line)
            for a_key, b_key, o_key in _COLUMN_SETS:
                if a_key in obj and b_key in obj and o_key in obj:
                    records.append(_make_record(str(obj[a_key]), str(obj[b_key]), str(obj[o_key]), line))
                    break
            else:
                raise ParseError("missing keys model_a, model_b, winner", line)
    return records


def write_csv(path: str | Path, raw: Iterable[RawComparison]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_a", "model_b", "winner"])
        for rc in raw:
            writer.writerow([rc.first_player, rc.second_player, rc.outcome.token])


def _frozen(a: npt.ArrayLike, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ComparisonDataset:
    """Players plus comparison blocks with per-row weights.

    Instances are immutable; every perturbation returns a new dataset.
    """

    players: tuple[str, ...]
    first: np.ndarray
    second: np.ndarray
    outcome: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        object.__setattr__(self, "first", _frozen(self.first, np.int64))
        object.__setattr__(self, "second", _frozen(self.second, np.int64))
        object.__setattr__(self, "outcome", _frozen(self.outcome, np.int8))
        n_rows = 2 * len(self.first)
        w = np.ones(n_rows) if self.weights is None else self.weights
        object.__setattr__(self, "weights", _frozen(w, np.float64))
        if not (len(self.first) == len(self.second) == len(self.outcome)):
            raise ValidationError("block arrays have mismatched lengths")
        if self.weights.shape != (n_rows,):
            raise ValidationError(f"expected {n_rows} row weights, got shape {self.weights.shape}")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValidationError("row weights must be finite and nonnegative")
        if len(set(self.players)) != len(self.players):
            raise ValidationError("player names must be unique")
        if len(self.first):
            m = len(self.players)
            if min(self.first.min(), self.second.min()) < 0 or max(self.first.max(), self.second.max()) >= m:
                raise ValidationError("player index out of range")
            if np.any(self.first == self.second):
                raise ValidationError("self-comparison in block list")

    # sizes

    @property
    def M(self) -> int:
        return len(self.players)

    @property
    def N(self) -> int:
        return 2 * len(self.first)

    @property
    def n_blocks(self) -> int:
        return len(self.first)

    # directed rows

    @cached_property
    def row_i(self) -> np.ndarray:
        return _frozen(np.column_stack([self.first, self.second]).ravel(), np.int64)

    @cached_property
    def row_j(self) -> np.ndarray:
        return _frozen(np.column_stack([self.second, self.first]).ravel(), np.int64)

    @cached_property
    def row_y(self) -> np.ndarray:
        table = np.array([_ROW_Y[Outcome(k)] for k in range(3)])
        return _frozen(table[self.outcome].ravel(), np.float64)

    @property
    def row_block(self) -> np.ndarray:
        return np.arange(self.N) // 2

    def block_rows(self, block_id: int) -> tuple[int, int]:
        self._check_block(block_id)
        return 2 * block_id, 2 * block_id + 1

    def rows_of_blocks(self, block_ids: Sequence[int]) -> np.ndarray:
        b = np.asarray(block_ids, dtype=np.int64)
        return np.column_stack([2 * b, 2 * b + 1]).ravel()

    @cached_property
    def block_active(self) -> np.ndarray:
        w = self.weights.reshape(-1, 2)
        return _frozen((w > 0).all(axis=1), bool)

    @property
    def is_tie(self) -> np.ndarray:
        return self.outcome == Outcome.TIE

    def incident_rows(self, player: int) -> np.ndarray:
        """Rows with positive weight touching ``player``."""
        mask = ((self.row_i == player) | (self.row_j == player)) & (self.weights > 0)
        return np.flatnonzero(mask)

    def incident_blocks(self, player: int) -> np.ndarray:
        mask = ((self.first == player) | (self.second == player)) & self.block_active
        return np.flatnonzero(mask)

    # pair weights

    def pair_weight_matrix(self, weights: np.ndarray | None = None) -> np.ndarray:
        """Symmetric ``M x M`` matrix of total row weight per unordered pair."""
        w = self.weights if weights is None else np.asarray(weights, dtype=float)
        m = self.M
        flat = np.bincount(self.row_i * m + self.row_j, weights=w, minlength=m * m).reshape(m, m)
        return flat + flat.T

    def pair_weight(self, i: int, j: int) -> float:
        if i == j:
            raise ValidationError("pair_weight needs two distinct players")
        mask = ((self.row_i == i) & (self.row_j == j)) | ((self.row_i == j) & (self.row_j == i))
        return float(self.weights[mask].sum())

    def pair_count(self, i: int, j: int) -> int:
        """Active raw comparisons between ``i`` and ``j``."""
        mask = (((self.first == i) & (self.second == j)) | ((self.first == j) & (self.second == i)))
        return int((mask & self.block_active).sum())

    # graph structure

    @cached_property
    def connected(self) -> bool:
        return component_count(self.M, self.row_i, self.row_j, self.weights) == 1

    def index_of(self, name: str) -> int:
        try:
            return self.players.index(name)
        except ValueError:
            raise ValidationError(f"unknown player {name!r}") from None

    # conversions

    def to_raw(self, active_only: bool = False) -> list[RawComparison]:
        out = []
        for b in range(self.n_blocks):
            if active_only and not self.block_active[b]:
                continue
            out.append(RawComparison(self.players[self.first[b]], self.players[self.second[b]],
                                     Outcome(int(self.outcome[b]))))
        return out

    def summary(self) -> dict:
        return {
            "M": self.M,
            "raw_count": self.n_blocks,
            "active_raw_count": int(self.block_active.sum()),
            "directed_count": self.N,
            "connected": bool(self.connected),
        }

    # perturbations (all return new datasets)

    def with_weights(self, weights: npt.ArrayLike) -> ComparisonDataset:
        return ComparisonDataset(self.players, self.first, self.second, self.outcome, np.asarray(weights, float))

    def drop_blocks(self, block_ids: Iterable[int]) -> ComparisonDataset:
        ids = list(block_ids)
        if len(set(ids)) != len(ids):
            raise ActionError("block dropped twice in one action set")
        w = self.weights.copy()
        for b in ids:
            self._check_block(b)
            if not self.block_active[b]:
                raise ActionError(f"block {b} is already dropped")
            w[2 * b] = w[2 * b + 1] = 0.0
        return self.with_weights(w)

    def flip_blocks(self, block_ids: Iterable[int]) -> ComparisonDataset:
        outcome = self.outcome.copy()
        for b in block_ids:
            self._check_block(b)
            if outcome[b] == Outcome.TIE:
                raise NotFlippableError(f"block {b} is a tie and has no outcome to reverse")
            outcome[b] = Outcome.SECOND_WINS if outcome[b] == Outcome.FIRST_WINS else Outcome.FIRST_WINS
        return ComparisonDataset(self.players, self.first, self.second, outcome, self.weights)

    def add_blocks(self, first: Sequence[int], second: Sequence[int], outcome: Sequence[int]) -> ComparisonDataset:
        first = np.asarray(first, dtype=np.int64)
        if len(first) == 0:
            return self
        return ComparisonDataset(
            self.players,
            np.concatenate([self.first, first]),
            np.concatenate([self.second, np.asarray(second, dtype=np.int64)]),
            np.concatenate([self.outcome, np.asarray(outcome, dtype=np.int8)]),
            np.concatenate([self.weights, np.ones(2 * len(first))]),
        )

    def remove_player(self, player: int) -> tuple[ComparisonDataset, np.ndarray]:
        """Dataset without ``player`` and its blocks, re-indexed.

        Returns the new dataset and the old indices of the surviving players.
        """
        keep = np.array([p for p in range(self.M) if p != player], dtype=np.int64)
        remap = np.full(self.M, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        blocks = (self.first != player) & (self.second != player)
        w = self.weights.reshape(-1, 2)[blocks].ravel()
        sub = ComparisonDataset(
            tuple(self.players[p] for p in keep),
            remap[self.first[blocks]],
            remap[self.second[blocks]],
            self.outcome[blocks],
            w,
        )
        return sub, keep

    def _check_block(self, block_id: int) -> None:
        if not 0 <= block_id < self.n_blocks:
            raise ValidationError(f"block {block_id} does not exist")


def component_count(m: int, row_i: np.ndarray, row_j: np.ndarray, weights: np.ndarray) -> int:
    """Connected components of the comparison graph over edges with positive weight."""
    mask = weights > 0
    graph = coo_matrix((np.ones(int(mask.sum())), (row_i[mask], row_j[mask])), shape=(m, m))
    n, _ = connected_components(graph, directed=False)
    return int(n)


def expand(raw: Sequence[RawComparison], players: Sequence[str] | None = None) -> ComparisonDataset:
    """Encode raw comparisons as a :class:`ComparisonDataset` with unit weights.

    Player indices follow first appearance unless ``players`` fixes the order
    (it may list players that never appear).
    """
    if not raw:
        raise ValidationError("at least one raw comparison is required")
    index: dict[str, int] = {}
    if players is not None:
        for p in players:
            index.setdefault(p, len(index))
        if len(index) != len(players):
            raise ValidationError("duplicate player names")

    def idx(name: str) -> int:
        if name not in index:
            if players is not None:
                raise ValidationError(f"player {name!r} missing from the fixed player list")
            index[name] = len(index)
        return index[name]

    first, second, outcome = [], [], []
    for rc in raw:
        first.append(idx(rc.first_player))
        second.append(idx(rc.second_player))
        outcome.append(int(rc.outcome))
    return ComparisonDataset(tuple(index), np.array(first), np.array(second), np.array(outcome))


def from_arrays(m: int, first: npt.ArrayLike, second: npt.ArrayLike, outcome: npt.ArrayLike,
                names: Sequence[str] | None = None) -> ComparisonDataset:
    """Build a dataset directly from index arrays (players named ``p0..p{m-1}`` by default)."""
    names = tuple(names) if names is not None else tuple(f"p{k}" for k in range(m))
    if len(names) != m:
        raise ValidationError("names must have length m")
    return ComparisonDataset(names, np.asarray(first), np.asarray(second), np.asarray(outcome))
