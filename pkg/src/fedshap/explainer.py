"""Full-space and federated Shapley explanations of KNN predictions.

In the federated procedure the host enumerates coalitions over its own
features plus one extra player, ``"federated"``, which stands for the whole
guest block. Switching that player on means sending the guest the
instance's pseudonym; switching it off means sending SPECIAL_OFF.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import (
    ADULT_GUEST_3,
    ADULT_GUEST_5,
    FeaturePartition,
    FeatureSchema,
    NumericDataset,
    ReferenceVector,
    compute_reference,
)
from .errors import DataError, EnumerationCapError, ProtocolError
from .federation import (
    SPECIAL_OFF,
    GuestParty,
    HostParty,
    HostSession,
    InProcChannel,
    federated_predict,
)
from .knn import KnnModel
from .rng import permutation
from .shapley import (
    DEFAULT_CAP,
    SHAPLEY,
    ShapleyGame,
    ShapleyReport,
    model_value_fn,
    shapley_values,
)

FEDERATED_PLAYER = "federated"
MODE_GUESTS: dict[str, tuple[str, ...] | None] = {
    "full": None,
    "federated3": ADULT_GUEST_3,
    "federated5": ADULT_GUEST_5,
}
DEMO_KEY = b"fedshap-demo-key"


@dataclass(frozen=True)
class ExplainConfig:
    partition: FeaturePartition
    reference: ReferenceVector
    schema: FeatureSchema
    weighting_mode: str = SHAPLEY

    @property
    def player_names(self) -> list[str]:
        return [self.schema.names[j] for j in self.partition.host_indices] + [FEDERATED_PLAYER]

    @property
    def player_count(self) -> int:
        return len(self.partition.host_indices) + 1


def explain_full(
    model: KnnModel,
    x,
    ref: ReferenceVector,
    names: Sequence[str] | None = None,
    weighting_mode: str = SHAPLEY,
    cap: int = DEFAULT_CAP,
) -> ShapleyReport:
    """Every feature is its own player."""
    p = model.p
    if p > cap:
        raise EnumerationCapError(f"{p} features exceeds the enumeration cap of {cap}")
    vf = model_value_fn(model.predict_proba, x, ref, [[j] for j in range(p)])
    game = ShapleyGame(p, batch_fn=vf.batch, weighting_mode=weighting_mode, player_names=names)
    return shapley_values(game, cap)


def explain_grouped(
    model: KnnModel, x, config: ExplainConfig, cap: int = DEFAULT_CAP
) -> ShapleyReport:
    """Centralized counterpart of :func:`explain_federated`: host features as
    single players, all guest columns as one player, on the full model."""
    part = config.partition
    groups = [[j] for j in part.host_indices] + [list(part.guest_indices)]
    vf = model_value_fn(model.predict_proba, x, config.reference, groups)
    game = ShapleyGame(
        len(groups), batch_fn=vf.batch, weighting_mode=config.weighting_mode,
        player_names=config.player_names,
    )
    return shapley_values(game, cap)


def explain_federated(
    host: HostParty,
    session: HostSession,
    x_host,
    guest_token: bytes,
    config: ExplainConfig,
    cache: dict[int, float] | None = None,
    cap: int = DEFAULT_CAP,
) -> ShapleyReport:
    """Shapley values over the host features plus the united federated feature.

    Each coalition costs one federated prediction. Results are stored in
    ``cache`` (keyed by coalition integer) as they arrive; if the channel
    fails the raised error carries the cache as ``partial_cache`` and a
    later call with that cache only evaluates the missing coalitions.
    """
    x_host = np.asarray(x_host, dtype=np.float64)
    h = len(config.partition.host_indices)
    if x_host.shape != (h,):
        raise ValueError(f"expected {h} host values, got {x_host.size}")
    cache = {} if cache is None else cache

    def value(mask) -> float:
        on = np.array(mask.bits[:h], dtype=bool)
        x_prime = np.where(on, x_host, host.reference)
        token = guest_token if mask.bits[h] else SPECIAL_OFF
        return federated_predict(host, session, x_prime, token)

    game = ShapleyGame(
        h + 1, value_fn=value, weighting_mode=config.weighting_mode,
        player_names=config.player_names,
    )
    try:
        return shapley_values(game, cap, cache=cache)
    except ProtocolError as exc:
        exc.partial_cache = cache
        raise


# ---------------------------------------------------------------------------
# Experiment wiring


def _slice(datasets: Sequence[NumericDataset], cols: list[int]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for ds in datasets:
        out.update({i: r[cols] for i, r in zip(ds.ids, ds.rows)})
    return out


def build_host(
    train: NumericDataset, instances: NumericDataset, partition: FeaturePartition,
    k: int = 5, key: bytes = DEMO_KEY,
) -> HostParty:
    cols = list(partition.host_indices)
    names = [train.schema.names[j] for j in cols]
    return HostParty.setup(names, _slice([train, instances], cols), train.ids, train.labels, k, key)


def build_guest(
    train: NumericDataset, instances: NumericDataset, partition: FeaturePartition,
    key: bytes = DEMO_KEY,
) -> GuestParty:
    cols = list(partition.guest_indices)
    names = [train.schema.names[j] for j in cols]
    return GuestParty.setup(names, _slice([train, instances], cols), train.ids, key)


def build_parties(
    train: NumericDataset,
    instances: NumericDataset,
    partition: FeaturePartition,
    k: int = 5,
    key: bytes = DEMO_KEY,
) -> tuple[HostParty, GuestParty]:
    """Split data vertically into a host and a guest (in-process simulation).

    ``instances`` are the rows explanations can be requested for; ``train``
    fixes the shared training order.
    """
    return (
        build_host(train, instances, partition, k, key),
        build_guest(train, instances, partition, key),
    )


@dataclass
class Workspace:
    """Everything one run needs: split, model, reference, party key."""

    train: NumericDataset
    test: NumericDataset
    model: KnnModel
    key: bytes = DEMO_KEY
    weighting_mode: str = SHAPLEY
    reference: ReferenceVector = field(init=False)
    _hosts: dict = field(default_factory=dict, init=False, repr=False)
    _guests: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.reference = compute_reference(self.train)

    @property
    def schema(self) -> FeatureSchema:
        return self.train.schema

    def partition(self, mode: str, guest_features: Sequence[str] | None = None) -> FeaturePartition:
        guests = guest_features if mode == "custom" else MODE_GUESTS[mode]
        if not guests:
            raise ValueError(f"mode {mode!r} has no guest features")
        return FeaturePartition.from_guest_names(self.schema, guests)

    def config(self, partition: FeaturePartition) -> ExplainConfig:
        return ExplainConfig(partition, self.reference, self.schema, self.weighting_mode)

    def host(self, partition: FeaturePartition) -> HostParty:
        if partition not in self._hosts:
            self._hosts[partition] = build_host(self.train, self.test, partition, self.model.k, self.key)
        return self._hosts[partition]

    def guest(self, partition: FeaturePartition) -> GuestParty:
        if partition not in self._guests:
            self._guests[partition] = build_guest(self.train, self.test, partition, self.key)
        return self._guests[partition]

    def explain(
        self,
        mode: str,
        row: int,
        guest_features: Sequence[str] | None = None,
        connect: Callable[[], object] | None = None,
    ) -> ShapleyReport:
        """Explain test row ``row``. Federated modes talk to the guest through
        ``connect()`` or, by default, an in-process guest."""
        x = self.test.rows[row]
        if mode == "full":
            return explain_full(self.model, x, self.reference, self.schema.names, self.weighting_mode)
        part = self.partition(mode, guest_features)
        host = self.host(part)
        channel = connect() if connect else InProcChannel(self.guest(part))
        try:
            with HostSession(channel) as session:
                return explain_federated(
                    host, session, x[list(part.host_indices)], host.token_for(self.test.ids[row]),
                    self.config(part),
                )
        finally:
            close = getattr(channel, "close", None)
            if close:
                close()


@dataclass
class BatchReport:
    mode: str
    instance_ids: list[str]
    player_names: list[str]
    attributions: np.ndarray  # (m, P)
    base_values: np.ndarray
    full_values: np.ndarray

    @property
    def mean_attributions(self) -> np.ndarray:
        return self.attributions.mean(axis=0)

    def report(self, i: int) -> ShapleyReport:
        return ShapleyReport(
            self.attributions[i], float(self.base_values[i]), float(self.full_values[i]),
            list(self.player_names),
        )

    @classmethod
    def from_reports(cls, mode: str, ids: Sequence[str], reports: Sequence[ShapleyReport]) -> "BatchReport":
        if not reports:
            raise DataError("empty batch")
        return cls(
            mode,
            list(ids),
            list(reports[0].player_names),
            np.vstack([r.attributions for r in reports]),
            np.array([r.base_value for r in reports]),
            np.array([r.full_value for r in reports]),
        )


def sample_rows(n: int, size: int, seed: int) -> list[int]:
    if size < 1:
        raise DataError("sample size must be at least 1")
    if size > n:
        raise DataError(f"sample size {size} exceeds {n} available instances")
    return permutation(n, seed)[:size]


def batch_explain(
    ws: Workspace,
    mode: str,
    sample_size: int,
    seed: int,
    guest_features: Sequence[str] | None = None,
    connect=None,
    progress: Callable[[int, int], None] | None = None,
) -> BatchReport:
    rows = sample_rows(len(ws.test), sample_size, seed)
    reports = []
    for n, r in enumerate(rows):
        reports.append(ws.explain(mode, r, guest_features, connect))
        if progress:
            progress(n + 1, len(rows))
    return BatchReport.from_reports(mode, [ws.test.ids[r] for r in rows], reports)


def _host_abs(report: ShapleyReport, players: Sequence[str]) -> np.ndarray:
    return np.abs(np.array([report[p] for p in players]))


def rank_agreement(report_a: ShapleyReport, report_b: ShapleyReport, common_players: Sequence[str]) -> float:
    """Spearman correlation of |attribution| over ``common_players``, ties at average rank.

    When either side is constant the correlation is undefined; we return 1.0
    if both sides are constant (no ranking to disagree on) and 0.0 otherwise.
    """
    if len(common_players) < 3:
        raise ValueError("rank agreement needs at least 3 common players")
    a = rankdata(_host_abs(report_a, common_players))
    b = rankdata(_host_abs(report_b, common_players))
    const_a, const_b = np.ptp(a) == 0, np.ptp(b) == 0
    if const_a or const_b:
        return 1.0 if const_a and const_b else 0.0
    a, b = a - a.mean(), b - b.mean()
    rho = float(np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b)))
    return max(-1.0, min(1.0, rho))


def mean_abs_deviation(report_a: ShapleyReport, report_b: ShapleyReport, players: Sequence[str]) -> float:
    a = np.array([report_a[p] for p in players])
    b = np.array([report_b[p] for p in players])
    return float(np.mean(np.abs(a - b)))


# ---------------------------------------------------------------------------
# CSV output; floats are written with repr() so they round-trip exactly.


def write_report_csv(report: ShapleyReport, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["player", "attribution", "base_value", "full_value"])
        for name, phi in zip(report.player_names, report.attributions):
            w.writerow([name, repr(float(phi)), repr(report.base_value), repr(report.full_value)])


def write_bar_csv(report: ShapleyReport, path: str | Path) -> None:
    """Players sorted by |attribution|, largest first (horizontal bar chart order)."""
    order = sorted(range(len(report.attributions)), key=lambda j: (-abs(report.attributions[j]), j))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["player", "attribution"])
        for j in order:
            w.writerow([report.player_names[j], repr(float(report.attributions[j]))])


def write_scatter_csv(batch: BatchReport, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "player", "attribution"])
        for iid, row in zip(batch.instance_ids, batch.attributions):
            for name, phi in zip(batch.player_names, row):
                w.writerow([iid, name, repr(float(phi))])


def write_mean_bar_csv(batch: BatchReport, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["player", "mean_attribution"])
        for name, phi in zip(batch.player_names, batch.mean_attributions):
            w.writerow([name, repr(float(phi))])


def read_report_csv(path: str | Path) -> ShapleyReport:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"empty report {path}")
    return ShapleyReport(
        [float(r["attribution"]) for r in rows],
        float(rows[0]["base_value"]),
        float(rows[0]["full_value"]),
        [r["player"] for r in rows],
    )
