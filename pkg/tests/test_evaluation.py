import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import silhouette_score

from ous.errors import ConfigError, ContractError, DomainError
from ous.evaluation import (
    CSV_HEADER,
    TAP_ORDER,
    AblationGrid,
    MetricsReport,
    cluster_report,
    confusion,
    per_class_recall,
    silhouette,
    uar,
    war,
)

labels7 = st.lists(st.integers(0, 6), min_size=1, max_size=60)


def test_confusion_examples():
    cm = confusion([0, 1, 1], [0, 0, 1])
    assert cm[0, 0] == 1 and cm[0, 1] == 1 and cm[1, 1] == 1 and cm.sum() == 3
    assert confusion([], []).sum() == 0
    np.testing.assert_array_equal(confusion([2, 3, 3], [2, 3, 3]), np.diag([0, 0, 1, 2, 0, 0, 0]))


def test_confusion_rejects_out_of_range():
    with pytest.raises(DomainError):
        confusion([7], [0])
    with pytest.raises(ContractError):
        confusion([0, 1], [0])


def test_recall_examples():
    cm = np.zeros((7, 7), int)
    cm[0, 0] = 10
    cm[1, 1], cm[1, 0] = 15, 15
    assert uar(cm) == pytest.approx(0.75)
    cm2 = np.zeros((7, 7), int)
    cm2[0, 0] = 10
    cm2[1, 1], cm2[1, 2] = 15, 15
    assert war(cm2) == pytest.approx(0.625)
    assert uar(np.diag([3, 1, 0, 2, 5, 1, 1])) == 1.0 == war(np.diag([3, 1, 0, 2, 5, 1, 1]))
    with pytest.raises(ContractError):
        uar(np.zeros((7, 7)))
    with pytest.raises(ContractError):
        war(np.zeros((7, 7)))


@given(labels7, st.randoms())
def test_war_is_accuracy_and_rows_are_support(labels, rnd):
    preds = [rnd.randrange(7) for _ in labels]
    cm = confusion(preds, labels)
    assert cm.sum() == len(labels)
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(labels, minlength=7))
    assert abs(war(cm) - np.mean(np.array(preds) == np.array(labels))) < 1e-12
    recall = per_class_recall(cm)
    support = cm.sum(axis=1)
    assert abs(war(cm) - np.nansum(recall * support) / support.sum()) < 1e-12


@given(labels7, st.randoms(), st.integers(0, 6), st.integers(2, 4))
def test_uar_invariant_to_duplicating_a_class(labels, rnd, cls, k):
    preds = [rnd.randrange(7) for _ in labels]
    extra = [(p, l) for p, l in zip(preds, labels) if l == cls] * (k - 1)
    cm = confusion(preds + [p for p, _ in extra], labels + [l for _, l in extra])
    assert abs(uar(cm) - uar(confusion(preds, labels))) < 1e-12


def test_metrics_report_ambiguous_accuracy():
    rep = MetricsReport.from_predictions([0, 1, 2, 2], [0, 1, 1, 2], [False, True, True, False])
    assert rep.ambiguous_accuracy == 0.5
    assert len(rep.per_class_recall) == 7 and rep.per_class_recall[3] is None
    assert rep.WAR == 0.75


def test_silhouette_examples():
    x = np.array([0.0, 0.1, 10.0, 10.1])
    assert silhouette(x, [0, 0, 1, 1]) == pytest.approx(0.99, abs=0.005)
    # tetrahedron vertices are equidistant, so a == b for every point
    tetra = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float)
    assert silhouette(tetra, [0, 0, 1, 1]) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ContractError):
        silhouette(x, [0, 0, 0, 0])
    with pytest.raises(ContractError):
        silhouette(x[:1], [0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_silhouette_matches_reference_and_is_invariant(seed, k):
    r = np.random.default_rng(seed)
    x = r.standard_normal((20, 3)) + np.repeat(r.standard_normal((k, 3)) * 3, 20 // k + 1, axis=0)[:20]
    labels = np.repeat(np.arange(k), 20 // k + 1)[:20]
    s = silhouette(x, labels)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(silhouette_score(x, labels), abs=1e-9)
    assert silhouette(x * 3.7 + 11.0, labels) == pytest.approx(s, abs=1e-9)
    assert silhouette(np.concatenate([x, x]), np.concatenate([labels, labels])) == pytest.approx(
        silhouette_score(np.concatenate([x, x]), np.concatenate([labels, labels])), abs=1e-9
    )


def test_singletons_score_zero():
    assert silhouette(np.array([[0.0], [1.0], [1.1]]), [0, 1, 1]) == pytest.approx((0 + (1 - 0.1 / 1.0) + (1 - 0.1 / 1.1)) / 3)


def test_cluster_report_keys(rng):
    taps = {name: rng.standard_normal((10, 4)) for name in TAP_ORDER}
    assert list(cluster_report(taps, [0, 1] * 5)) == list(TAP_ORDER)


def test_grid_cells_and_validation(tmp_path):
    assert len(AblationGrid().cells()) == 36
    grid = AblationGrid.from_dict({"tfe_blocks": [8, 12, 16], "prompt_length": [16, 32, 64],
                                   "loss_strategy": ["global"], "fusion": ["tfe"]})
    assert len(grid.cells()) == 9
    with pytest.raises(ConfigError):
        AblationGrid.from_dict({"depth": [1]})
    with pytest.raises(ConfigError):
        AblationGrid.from_dict({"tfe_blocks": []})
    bad = tmp_path / "g.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError):
        AblationGrid.load(str(bad))


def test_csv_header():
    assert CSV_HEADER == ("setting_id", "tfe_blocks", "prompt_length", "loss_strategy", "fusion",
                          "seed", "UAR", "WAR", "best_epoch", "status")
