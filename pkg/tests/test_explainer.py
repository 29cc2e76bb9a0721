import numpy as np
import pytest

from fedshap.errors import DataError, ProtocolError
from fedshap.explainer import (
    FEDERATED_PLAYER,
    BatchReport,
    batch_explain,
    explain_federated,
    explain_full,
    explain_grouped,
    rank_agreement,
    read_report_csv,
    sample_rows,
    write_bar_csv,
    write_mean_bar_csv,
    write_report_csv,
    write_scatter_csv,
)
from fedshap.federation import HostSession, InProcChannel
from fedshap.shapley import UNIFORM_AVERAGE, ShapleyReport


def report(values, names=None):
    names = names or [f"p{j}" for j in range(len(values))]
    return ShapleyReport(np.array(values, dtype=float), 0.0, float(sum(values)), names)


# -- rank agreement ----------------------------------------------------------------


def test_rank_agreement_identical():
    r = report([0.3, -0.1, 0.2, 0.05])
    assert rank_agreement(r, r, r.player_names) == 1.0


def test_rank_agreement_reversed():
    a = report([float(j + 1) for j in range(9)])
    b = report([float(9 - j) for j in range(9)])
    assert rank_agreement(a, b, a.player_names) == -1.0


def test_rank_agreement_uses_magnitudes_and_average_ties():
    a = report([-3.0, 2.0, 1.0])
    b = report([3.0, 2.0, 1.0])
    assert rank_agreement(a, b, a.player_names) == 1.0
    # ranks (1.5, 1.5, 3) vs (1, 2, 3): Spearman by hand = 0.8660254...
    c = report([1.0, 1.0, 2.0])
    d = report([1.0, 2.0, 3.0])
    assert rank_agreement(c, d, c.player_names) == pytest.approx(np.sqrt(3) / 2, abs=1e-12)


def test_rank_agreement_constant_and_errors():
    z = report([0.0, 0.0, 0.0])
    assert rank_agreement(z, z, z.player_names) == 1.0
    assert rank_agreement(z, report([1.0, 2.0, 3.0]), z.player_names) == 0.0
    with pytest.raises(ValueError):
        rank_agreement(z, z, ["p0", "p1"])


# -- explanations on Adult -----------------------------------------------------------


@pytest.fixture(scope="module")
def row():
    return 11


def test_full_explanation_shape_and_efficiency(workspace, row):
    rep = workspace.explain("full", row)
    assert len(rep.attributions) == 12
    assert rep.player_names == workspace.schema.names
    x = workspace.test.rows[row]
    assert rep.full_value == workspace.model.predict_proba(x)
    assert rep.base_value == workspace.model.predict_proba(workspace.reference.values)
    assert abs(rep.attributions.sum() - (rep.full_value - rep.base_value)) <= 1e-9


def test_full_explanation_counts_4096_evaluations(workspace, monkeypatch, row):
    from fedshap import shapley

    seen = []
    orig = shapley.ModelValueFunction.batch

    def counting(self, masks):
        seen.append(len(masks))
        return orig(self, masks)

    monkeypatch.setattr(shapley.ModelValueFunction, "batch", counting)
    workspace.explain("full", row)
    assert sum(seen) == 4096


def test_instance_equal_to_reference_gets_zeros(workspace):
    rep = explain_full(workspace.model, workspace.reference.values, workspace.reference)
    assert np.all(rep.attributions == 0.0)


@pytest.mark.parametrize("mode, players, calls", [("federated3", 10, 1024), ("federated5", 8, 256)])
def test_federated_matches_grouped_oracle(workspace, row, mode, players, calls):
    part = workspace.partition(mode)
    host, guest = workspace.host(part), workspace.guest(part)
    channel = InProcChannel(guest, record=True)
    x = workspace.test.rows[row]
    with HostSession(channel) as s:
        fed = explain_federated(
            host, s, x[list(part.host_indices)], host.token_for(workspace.test.ids[row]),
            workspace.config(part),
        )
    grouped = explain_grouped(workspace.model, x, workspace.config(part))
    assert len(fed.attributions) == players
    assert fed.player_names[-1] == FEDERATED_PLAYER
    assert np.array_equal(fed.attributions, grouped.attributions)
    assert fed.base_value == grouped.base_value and fed.full_value == grouped.full_value
    # HELLO + one request per coalition + BYE
    assert len(channel.transcript) == calls + 2


def test_full_and_federated_share_the_baseline(workspace, row):
    full = workspace.explain("full", row)
    fed = workspace.explain("federated3", row)
    assert full.base_value == fed.base_value and full.full_value == fed.full_value
    for rep in (full, fed):
        assert abs(rep.attributions.sum() - (rep.full_value - rep.base_value)) <= 1e-9


def test_federated_is_deterministic(workspace, row):
    a = workspace.explain("federated5", row)
    b = workspace.explain("federated5", row)
    assert a.attributions.tobytes() == b.attributions.tobytes()


def test_uniform_average_mode(workspace, row):
    from dataclasses import replace

    part = workspace.partition("federated5")
    cfg = replace(workspace.config(part), weighting_mode=UNIFORM_AVERAGE)
    rep = explain_grouped(workspace.model, workspace.test.rows[row], cfg)
    assert rep.weighting_mode == UNIFORM_AVERAGE and len(rep.attributions) == 8


class FlakyChannel(InProcChannel):
    """Fails once after ``fail_after`` requests."""

    def __init__(self, guest, fail_after):
        super().__init__(guest)
        self.left = fail_after

    def request(self, msg):
        self.left -= 1
        if self.left == 0:
            from fedshap.errors import ChannelError

            raise ChannelError("link dropped")
        return super().request(msg)


def test_resume_after_channel_failure(workspace, row):
    part = workspace.partition("federated5")
    host, guest = workspace.host(part), workspace.guest(part)
    x_h = workspace.test.rows[row][list(part.host_indices)]
    tok = host.token_for(workspace.test.ids[row])
    s = HostSession(FlakyChannel(guest, 100)).hello()
    with pytest.raises(ProtocolError) as exc:
        explain_federated(host, s, x_h, tok, workspace.config(part))
    cache = exc.value.partial_cache
    done = len(cache)
    assert 0 < done < 256
    resumed_channel = InProcChannel(guest, record=True)
    with HostSession(resumed_channel) as s2:
        rep = explain_federated(host, s2, x_h, tok, workspace.config(part), cache=cache)
    # HELLO + only the missing coalitions + BYE
    assert len(resumed_channel.transcript) == (256 - done) + 2
    assert np.array_equal(rep.attributions, workspace.explain("federated5", row).attributions)


# -- batches and files ------------------------------------------------------------


def test_sample_rows():
    assert sample_rows(10, 3, 1) == sample_rows(10, 3, 1)
    assert len(set(sample_rows(10, 10, 1))) == 10
    with pytest.raises(DataError):
        sample_rows(10, 0, 1)
    with pytest.raises(DataError):
        sample_rows(10, 11, 1)


def test_batch_of_one_is_the_single_report(workspace):
    batch = batch_explain(workspace, "federated5", 1, seed=4)
    row = sample_rows(len(workspace.test), 1, 4)[0]
    single = workspace.explain("federated5", row)
    assert np.array_equal(batch.attributions[0], single.attributions)
    assert np.array_equal(batch.mean_attributions, single.attributions)


def test_batch_dummy_feature_mean_is_zero(workspace):
    # Country is constant at the reference for most instances; any column whose
    # value equals the reference is a dummy for that instance
    batch = batch_explain(workspace, "full", 3, seed=2)
    rows = sample_rows(len(workspace.test), 3, 2)
    for i, r in enumerate(rows):
        x = workspace.test.rows[r]
        for j in np.flatnonzero(x == workspace.reference.values):
            assert batch.attributions[i, j] == 0.0


def test_report_files_round_trip(tmp_path):
    rep = report([0.1, -0.25, 1 / 3], ["a", "b", "federated"])
    write_report_csv(rep, tmp_path / "r.csv")
    back = read_report_csv(tmp_path / "r.csv")
    assert back.attributions.tobytes() == rep.attributions.tobytes()
    assert back.player_names == rep.player_names
    write_bar_csv(rep, tmp_path / "bar.csv")
    lines = (tmp_path / "bar.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines[1:]] == ["federated", "b", "a"]


def test_batch_files(tmp_path):
    reps = [report([1.0, 2.0, 3.0]), report([3.0, 2.0, 1.0])]
    batch = BatchReport.from_reports("full", ["r1", "r2"], reps)
    write_scatter_csv(batch, tmp_path / "s.csv")
    write_mean_bar_csv(batch, tmp_path / "m.csv")
    s = (tmp_path / "s.csv").read_text().splitlines()
    assert s[0] == "instance_id,player,attribution" and len(s) == 7
    m = (tmp_path / "m.csv").read_text().splitlines()
    assert m[1:] == ["p0,2.0", "p1,2.0", "p2,2.0"]
    with pytest.raises(DataError):
        BatchReport.from_reports("full", [], [])
