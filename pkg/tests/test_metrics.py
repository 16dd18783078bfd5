import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hkt import nn
from hkt.data import Dataset
from hkt.errors import ConfigError, InputError
from hkt.metrics import (
    ConfusionMatrix, MetricsRecord, evaluate, read_confusion_csv, read_metrics_csv,
    split_accuracy, summarize_runs, write_confusion_csv, write_metrics_csv,
)

CIFAR = ("plane", "car", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")

# CIFAR-10 counts of a locally trained model without any transfer
NO_TRANSFER = np.array([
    [537, 1, 35, 2, 13, 5, 36, 45, 193, 133],
    [5, 510, 0, 2, 3, 7, 34, 14, 103, 322],
    [52, 1, 405, 25, 50, 30, 236, 139, 48, 14],
    [15, 0, 22, 312, 26, 88, 286, 171, 52, 28],
    [13, 1, 36, 32, 452, 7, 174, 235, 43, 7],
    [6, 1, 19, 103, 18, 475, 135, 212, 18, 13],
    [2, 0, 4, 7, 5, 6, 961, 9, 4, 2],
    [1, 0, 2, 5, 8, 7, 19, 942, 7, 9],
    [4, 3, 0, 1, 1, 0, 9, 2, 953, 27],
    [3, 3, 0, 5, 0, 0, 9, 14, 16, 950],
])


def test_fixture_matrix_derived_quantities():
    cm = ConfusionMatrix(NO_TRANSFER, CIFAR)
    assert cm.total == 10000
    assert (cm.counts.sum(axis=1) == 1000).all()
    local = [CIFAR.index(c) for c in ("frog", "horse", "ship", "truck")]
    loc, rem, comb = split_accuracy(cm, local)
    assert comb == 0.6497
    assert loc == 0.9515
    assert rem == (537 + 510 + 405 + 312 + 452 + 475) / 6000
    assert comb == cm.accuracy()


def test_split_accuracy_rejects_unknown_class():
    with pytest.raises(ConfigError):
        split_accuracy(ConfusionMatrix(np.eye(3, dtype=int)), [0, 3])


def test_split_accuracy_empty_side_is_nan():
    loc, rem, comb = split_accuracy(ConfusionMatrix(np.eye(2, dtype=int)), [0, 1])
    assert loc == 1.0 and np.isnan(rem) and comb == 1.0


def test_confusion_rejects_bad_grids():
    with pytest.raises(InputError):
        ConfusionMatrix(np.ones((2, 3), dtype=int))
    with pytest.raises(InputError):
        ConfusionMatrix(-np.eye(2, dtype=int))
    with pytest.raises(InputError):
        ConfusionMatrix(np.eye(2, dtype=int), ("a",))


def fixed_classifier(n_in, n_classes):
    """Predicts class ``argmax(x[:, :n_classes])``."""
    w = np.zeros((n_in, n_classes))
    w[:n_classes, :] = np.eye(n_classes)
    return nn.DenseNet([nn.DenseLayer(w, np.zeros(n_classes))])


def test_perfect_classifier():
    labels = np.array([0, 1, 2, 2, 1, 0, 3])
    x = np.eye(4)[labels]
    test = Dataset(x, labels, 4, "test")
    acc = evaluate(fixed_classifier(4, 4), test, {0, 1})
    assert (acc.local_acc, acc.remote_acc, acc.combined_acc) == (1.0, 1.0, 1.0)
    assert np.array_equal(acc.confusion.counts, np.diag(np.bincount(labels)))


def test_random_fixture_against_counting_oracle():
    rng = np.random.default_rng(50)
    x = rng.normal(size=(50, 5))
    labels = rng.integers(0, 5, size=50)
    net = fixed_classifier(5, 5)
    snapshot = [p.copy() for p in net.parameters()]
    acc = evaluate(net, Dataset(x, labels, 5, "test"), {1, 3})
    pred = [max(range(5), key=lambda j: (row[j], -j)) for row in x.tolist()]
    hits_l = sum(p == t for p, t in zip(pred, labels) if t in (1, 3))
    n_l = sum(t in (1, 3) for t in labels)
    hits_r = sum(p == t for p, t in zip(pred, labels) if t not in (1, 3))
    assert acc.local_acc == hits_l / n_l
    assert acc.remote_acc == hits_r / (50 - n_l)
    assert acc.combined_acc == (hits_l + hits_r) / 50
    assert acc.combined_acc == np.trace(acc.confusion.counts) / 50
    for i in range(5):
        for j in range(5):
            assert acc.confusion.counts[i, j] == sum(1 for p, t in zip(pred, labels) if t == i and p == j)
    assert all(np.array_equal(a, b) for a, b in zip(snapshot, net.parameters()))


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40),
       st.sets(st.integers(0, 3), min_size=1, max_size=3))
def test_local_and_remote_recombine_to_combined(pairs, local):
    t, p = zip(*pairs)
    cm = ConfusionMatrix.from_predictions(t, p, 4)
    loc, rem, comb = split_accuracy(cm, local)
    n_l = sum(x in local for x in t)
    parts = (0 if n_l == 0 else loc * n_l) + (0 if n_l == len(t) else rem * (len(t) - n_l))
    assert parts / len(t) == pytest.approx(comb, abs=1e-12)


def record(epoch, agent, acc=0.5, method="ours"):
    return MetricsRecord(epoch, agent, method, acc, acc / 2, acc / 3, 1.25, 0.125, 2 * epoch, 0.0)


def test_metrics_csv_header_only(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv([], path)
    assert path.read_text() == "epoch,agent,method,local_acc,remote_acc,combined_acc,loss1,loss2,messages,seconds\n"
    assert read_metrics_csv(path) == []


def test_metrics_csv_round_trip(tmp_path):
    recs = [record(e, a, 0.25 * (a + 1)) for e in (1, 2) for a in (0, 1)]
    path = tmp_path / "m.csv"
    write_metrics_csv(recs, path)
    assert path.read_text().splitlines()[1] == "1,0,ours,0.250000,0.125000,0.083333,1.250000,0.125000,2,0.000000"
    back = read_metrics_csv(path)
    assert [(r.epoch, r.agent_id, r.method, r.local_acc, r.messages_total) for r in back] == \
        [(r.epoch, r.agent_id, r.method, r.local_acc, r.messages_total) for r in recs]
    for a, b in zip(back, recs):
        assert a.combined_acc == pytest.approx(b.combined_acc, abs=5e-7)


def test_metrics_csv_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(InputError):
        read_metrics_csv(path)


def test_write_to_missing_directory_names_path(tmp_path):
    bad = tmp_path / "nope" / "m.csv"
    with pytest.raises(OSError, match="nope"):
        write_metrics_csv([], bad)


def test_confusion_csv_lines(tmp_path):
    path = tmp_path / "c.csv"
    write_confusion_csv(ConfusionMatrix([[3, 1], [0, 4]], ("cat", "dog")), path)
    assert path.read_text().splitlines() == ["cat,dog", "3,1", "0,4"]
    back = read_confusion_csv(path)
    assert back.class_names == ("cat", "dog")
    assert np.array_equal(back.counts, [[3, 1], [0, 4]])


def test_summarize_single_and_pair():
    cells = summarize_runs([[record(1, 0, 0.6)]])
    local = [c for c in cells if c.metric == "local_acc"][0]
    assert (local.mean, local.std) == (0.6, 0.0)
    cells = summarize_runs([[record(1, 0, 0.6)], [record(1, 0, 0.8)]])
    local = [c for c in cells if c.metric == "local_acc"][0]
    assert local.mean == pytest.approx(0.7, abs=1e-15)


def test_summarize_five_runs_against_scalar_oracle():
    rng = np.random.default_rng(5)
    vals = rng.uniform(size=(5, 3))
    runs = [[record(e + 1, 0, vals[s, e]) for e in range(3)] for s in range(5)]
    cells = {(c.epoch, c.metric): c for c in summarize_runs(runs)}
    for e in range(3):
        col = vals[:, e].tolist()
        mean = sum(col) / 5
        std = (sum((v - mean) ** 2 for v in col) / 5) ** 0.5
        assert cells[(e + 1, "local_acc")].mean == pytest.approx(mean, abs=1e-12)
        assert cells[(e + 1, "local_acc")].std == pytest.approx(std, abs=1e-12)


def test_summarize_rejects_ragged_runs():
    with pytest.raises(InputError):
        summarize_runs([[record(1, 0)], [record(1, 0), record(2, 0)]])
    with pytest.raises(InputError):
        summarize_runs([])
