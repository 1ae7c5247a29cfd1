import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crosssplit.config import ExperimentConfig, format_config, parse_config
from crosssplit.datasets import generate_blobs, inject_symmetric_noise
from crosssplit.errors import ConfigError, ContractError, DatasetParseError
from crosssplit.metrics import (
    METRICS_HEADER,
    EpochMetrics,
    MetricsLog,
    append_epoch,
    best_and_last,
    export_csv,
    export_embeddings,
    export_plotdata,
    import_csv,
    memorization_counts,
    memorization_metrics,
    merge_plotdata,
)
from crosssplit.nn import Mlp, one_hot, softmax
from crosssplit.trainer import NetworkPair, TrainConfig


class _Predictor:
    def __init__(self, labels, num_classes):
        self.probs = softmax(6.0 * one_hot(labels, num_classes))

    def predict_proba(self, X):
        return self.probs


@pytest.fixture(scope="module")
def noisy():
    return inject_symmetric_noise(generate_blobs(4, 50, 3, 1.0, seed=0), 0.3, seed=2)


def test_memorizing_network_scores_one_everywhere(noisy):
    c = memorization_counts(_Predictor(noisy.assigned_labels, 4), noisy)
    assert (c.acc_clean, c.acc_noisy) == (1.0, 1.0)


def test_truth_predicting_network_scores_zero_on_noisy(noisy):
    c = memorization_counts(_Predictor(noisy.true_labels, 4), noisy)
    assert (c.acc_clean, c.acc_noisy) == (1.0, 0.0)


def test_memorization_brute_force_and_identity():
    ds = inject_symmetric_noise(generate_blobs(5, 40, 3, 1.0, seed=1), 0.45, seed=3)
    net = Mlp([3, 7, 5], seed=6)
    c = memorization_counts(net, ds)
    probs = net.predict_proba(ds.features)
    clean_hits = noisy_hits = n_noisy = 0
    for i in range(ds.n_examples):
        pred = max(range(5), key=lambda k: (probs[i, k], -k))
        flipped = ds.assigned_labels[i] != ds.true_labels[i]
        n_noisy += flipped
        if pred == ds.assigned_labels[i]:
            if flipped:
                noisy_hits += 1
            else:
                clean_hits += 1
    assert (c.correct_clean, c.correct_noisy, c.n_noisy) == (clean_hits, noisy_hits, n_noisy)
    # accounting identity in integers
    overall = int(np.count_nonzero(probs.argmax(1) == ds.assigned_labels))
    assert c.correct_clean + c.correct_noisy == overall
    assert c.n_clean * c.acc_clean + c.n_noisy * c.acc_noisy == pytest.approx(
        ds.n_examples * c.acc_overall, abs=1e-9)


def test_memorization_metrics_per_network(noisy):
    pair = NetworkPair([_Predictor(noisy.assigned_labels, 4), _Predictor(noisy.true_labels, 4)],
                       [None, None])
    assert memorization_metrics(pair, noisy) == [(1.0, 1.0), (1.0, 0.0)]


def test_memorization_requires_flags():
    class Plain:
        features = np.zeros((2, 2))
        assigned_labels = np.zeros(2, int)
    with pytest.raises(ContractError):
        memorization_counts(_Predictor([0, 0], 2), Plain())


def _entry(epoch, **kw):
    values = dict.fromkeys(METRICS_HEADER[1:], 0.25)
    values.update(kw)
    return EpochMetrics(epoch=epoch, **values)


def test_empty_log_header_only(tmp_path):
    path = tmp_path / "m.csv"
    export_csv(MetricsLog(), path)
    assert path.read_text() == ",".join(METRICS_HEADER) + "\n"
    assert len(import_csv(path)) == 0


def test_csv_roundtrip_full_precision(tmp_path):
    log = MetricsLog()
    append_epoch(log, _entry(1, gamma=math.nan, lr=0.1 + 0.2, sup_loss=1 / 3))
    append_epoch(log, _entry(2, gamma=0.6, test_acc_ens=0.7123456789012345, con_loss=1e-300))
    path = tmp_path / "m.csv"
    export_csv(log, path)
    back = import_csv(path)
    assert len(back) == 2
    for a, b in zip(log, back):
        for name in METRICS_HEADER:
            x, y = getattr(a, name), getattr(b, name)
            assert (math.isnan(x) and math.isnan(y)) or x == y


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64),
                min_size=15, max_size=15))
def test_csv_roundtrip_any_float(tmp_path_factory, values):
    log = MetricsLog([EpochMetrics(3, *values)])
    path = tmp_path_factory.mktemp("rt") / "m.csv"
    export_csv(log, path)
    assert import_csv(path)[0].row() == log[0].row()


def test_non_monotone_append_rejected():
    log = MetricsLog([_entry(1), _entry(2)])
    with pytest.raises(ContractError):
        log.append(_entry(2))
    with pytest.raises(ContractError):
        log.append(_entry(1))


def test_import_rejects_corrupt_file(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(",".join(METRICS_HEADER) + "\n1,0.5\n")
    with pytest.raises(DatasetParseError) as err:
        import_csv(path)
    assert err.value.line == 2


def test_export_io_error_names_path(tmp_path):
    target = tmp_path / "missing" / "m.csv"
    with pytest.raises(OSError, match="missing"):
        export_csv(MetricsLog(), target)


def test_plotdata_files(tmp_path):
    log = MetricsLog([_entry(1, test_acc_ens=0.5), _entry(2, test_acc_ens=0.75)])
    paths = export_plotdata(log, tmp_path)
    assert sorted(p.rsplit("/", 1)[1] for p in paths) == ["clean_acc.csv", "noisy_acc.csv", "test_acc.csv"]
    rows = (tmp_path / "test_acc.csv").read_text().splitlines()
    assert rows[0] == "epoch,test_acc_n1,test_acc_n2,test_acc_ens"
    assert rows[2] == "2,0.25,0.25,0.75"


def test_merged_plotdata_prefixes(tmp_path):
    a = MetricsLog([_entry(1), _entry(2)])
    b = MetricsLog([_entry(1)])
    merge_plotdata({"full": a, "baseline": b}, tmp_path)
    rows = (tmp_path / "noisy_acc.csv").read_text().splitlines()
    assert rows[0] == ("epoch,full:train_acc_noisy_n1,full:train_acc_noisy_n2,"
                       "baseline:train_acc_noisy_n1,baseline:train_acc_noisy_n2")
    assert rows[2] == "2,0.25,0.25,,"


def test_best_and_last():
    accs = [0.1 * k for k in range(1, 13)]
    log = MetricsLog([_entry(i + 1, test_acc_ens=a) for i, a in enumerate(accs)])
    best, last = best_and_last(log)
    assert best == accs[-1]
    assert last == pytest.approx(np.mean(accs[-10:]), abs=1e-15)
    assert all(math.isnan(v) for v in best_and_last(MetricsLog()))


def test_embeddings_export(tmp_path, noisy):
    net = Mlp([3, 9, 5, 4], seed=1)
    path = tmp_path / "emb.csv"
    export_embeddings(net, noisy, path)
    lines = path.read_text().splitlines()
    assert len(lines) == noisy.n_examples + 1
    assert lines[0].split(",")[:3] == ["id", "true_label", "assigned_label"]
    assert len(lines[1].split(",")) == 3 + 5
    first = path.read_bytes()
    export_embeddings(net, noisy, path)
    assert path.read_bytes() == first


# -- config -----------------------------------------------------------------------

def test_minimal_config_materializes_defaults():
    cfg = parse_config("[data]\nclasses = 4\n[noise]\nkind = symmetric\nratio = 0.4\n")
    assert cfg.data.classes == 4 and cfg.noise.ratio == 0.4
    assert cfg.train == TrainConfig()
    assert cfg.train.ssl.tau == 0.95 and cfg.train.ssl.lambda_c == 0.025
    assert cfg.train.momentum == 0.9 and cfg.train.weight_decay == 5e-4
    assert cfg.checkpoint_every == 0


def test_config_roundtrip_through_text():
    text = ("[data]\nclasses = 4\n[noise]\nkind = asymmetric\nratio = 0.2\ngroups = 0,1;2,3\n"
            "[train]\nhidden = 32,16\ne_max = 20\ncheckpoint_every = 5\n"
            "[ssl]\ntau = 0.9\n[ablation]\nvariant = no_split\n")
    cfg = parse_config(text)
    assert cfg.noise.groups == ((0, 1), (2, 3))
    assert cfg.train.hidden == (32, 16) and cfg.train.ablation == "no_split"
    assert parse_config(format_config(cfg)) == cfg


def test_config_reads_files(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[train]\ne_max = 12\n")
    assert parse_config(str(path)).train.e_max == 12


@pytest.mark.parametrize("text, field", [
    ("[train]\ne_warm = 10\ne_max = 10\n", "e_warm"),
    ("[noise]\nkind = symmetric\nratio = 1.5\n", "ratio"),
    ("[train]\nbogus = 1\n", "train.bogus"),
    ("[ssl]\nnope = 1\n", "ssl.nope"),
    ("[train]\ne_max = ten\n", "train.e_max"),
    ("[whatever]\nx = 1\n", "whatever"),
    ("[ablation]\nvariant = magic\n", "magic"),
    ("[data]\nclasses = 4\n[noise]\nkind = asymmetric\ngroups = 0,1;2\n", "groups"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(text)


def test_overrides_take_precedence():
    cfg = parse_config("[train]\ne_max = 30\nseed = 3\n").with_overrides(seed=9, e_max=40)
    assert (cfg.train.seed, cfg.train.e_max) == (9, 40)
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(e_warm=60)

