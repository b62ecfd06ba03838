import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cspacenet.cspace import CSpaceGrid, load_png
from cspacenet.dataset import Family, FamilySpec, generate_dataset
from cspacenet.eval import (
    THRESHOLD_GRID,
    ConfusionMatrix,
    EvaluationError,
    OracleBackend,
    ThresholdChoice,
    ThresholdSweep,
    confusion,
    data_size_study,
    evaluate,
    metrics,
    select_threshold,
    timing_benchmark,
    zero_shot_eval,
)
from cspacenet.net import NetConfig, TrainHyper, build_model, train

SMALL = NetConfig(input_resolution=16, num_blocks=2, convs_per_block=(1, 1), channels=(4, 8))


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval")
    return generate_dataset(FamilySpec(Family.THREE_CIRCLES), 20, (0.5, 0.25, 0.25), 4, 16, root)


@pytest.fixture(scope="module")
def small_ckpt(manifest):
    return train(SMALL, manifest, TrainHyper(lr=1.0, max_epochs=3, plateau_patience=None))


class ArrayBackend:
    """Serves fixed prediction images keyed by record id."""

    identifier = "array"

    def __init__(self, table):
        self.table = table

    def predict_records(self, manifest, records):
        return np.stack([self.table[r["id"]] for r in records])


def truth_images(manifest, split):
    return {r["id"]: load_png(manifest.path(r, "cspace")) for r in manifest.split(split)}


# --- confusion and metrics


def test_confusion_examples():
    g = CSpaceGrid(np.eye(8, dtype=bool))
    cm = confusion(g, g)
    assert cm.collision_predicted_free == cm.free_predicted_collision == 0
    cm = confusion(CSpaceGrid(np.zeros((8, 8), bool)), CSpaceGrid(np.ones((8, 8), bool)))
    assert cm.collision_predicted_free == 64 and cm.total == 64


def test_confusion_matches_loop():
    rng = np.random.default_rng(1)
    p, t = rng.random((2, 16, 16)) < 0.4
    counts = {"cc": 0, "cf": 0, "fc": 0, "ff": 0}
    for i in range(16):
        for j in range(16):
            counts[("c" if t[i, j] else "f") + ("c" if p[i, j] else "f")] += 1
    cm = confusion(CSpaceGrid(p), CSpaceGrid(t))
    assert cm.counts == (counts["cc"], counts["cf"], counts["fc"], counts["ff"])


def test_confusion_rejects_mismatch():
    with pytest.raises(ValueError):
        confusion(CSpaceGrid(np.zeros((4, 4), bool)), CSpaceGrid(np.zeros((8, 8), bool)))


def test_metrics_closed_form():
    # free-positive: TP = ff, FP = cf, FN = fc
    cm = ConfusionMatrix(collision_predicted_collision=90, collision_predicted_free=10,
                         free_predicted_collision=10, free_predicted_free=90)
    for pos in ("free", "collision"):
        m = metrics(cm, pos)
        assert m["precision"] == m["recall"] == m["f1"] == m["accuracy"] == pytest.approx(0.9)


def test_metrics_perfect_and_sentinels():
    m = metrics(ConfusionMatrix(5, 0, 0, 7))
    assert m["accuracy"] == m["precision"] == m["recall"] == m["f1"] == 1.0 and not m["flags"]
    m = metrics(ConfusionMatrix(5, 0, 7, 0), "free")
    assert m["precision"] == 0.0 and "no_predicted_positives" in m["flags"]
    m = metrics(ConfusionMatrix(5, 0, 0, 0), "free")
    assert "no_actual_positives" in m["flags"] and m["f1"] == 0.0
    with pytest.raises(ValueError):
        metrics(ConfusionMatrix())
    with pytest.raises(ValueError):
        metrics(ConfusionMatrix(1, 0, 0, 0), "obstacle")


def test_row_normalized_sums_to_one():
    rn = ConfusionMatrix(9791, 229, 17, 983).row_normalized()
    assert all(sum(r) == pytest.approx(1.0) for r in rn)


# --- threshold selection


def test_perfect_binary_ties_to_largest_eta(manifest):
    c = select_threshold(ArrayBackend(truth_images(manifest, "val")), manifest)
    assert c.eta == 0.99 and c.f1 == 1.0
    assert c.grid == THRESHOLD_GRID and len(c.f1_by_eta) == 99


def test_uniform_noise_plateau_follows_tie_rule(manifest):
    # collision pixels stay below 0.1 and free ones at or above 0.9, so every
    # eta in [0.10, 0.90] is perfect and the tie rule picks the top of that plateau
    rng = np.random.default_rng(0)
    preds = {k: v + rng.uniform(-0.1, 0.1, v.shape) for k, v in truth_images(manifest, "val").items()}
    c = select_threshold(ArrayBackend(preds), manifest)
    assert c.f1 == 1.0 and c.eta == 0.9
    perfect = [e for e, f in zip(c.grid, c.f1_by_eta) if f == 1.0]
    assert min(perfect) == 0.1 and 0.35 <= (min(perfect) + max(perfect)) / 2 <= 0.65


def test_gaussian_noise_gives_central_eta(manifest):
    rng = np.random.default_rng(0)
    preds = {k: v + rng.normal(0.0, 0.2, v.shape) for k, v in truth_images(manifest, "val").items()}
    c = select_threshold(ArrayBackend(preds), manifest)
    assert 0.35 <= c.eta <= 0.65


def test_threshold_deterministic(small_ckpt, manifest):
    assert select_threshold(small_ckpt, manifest) == select_threshold(small_ckpt, manifest)


def test_threshold_choice_validation():
    with pytest.raises(ValueError):
        ThresholdChoice(1.0, 0.5, THRESHOLD_GRID)
    with pytest.raises(ValueError):
        ThresholdSweep([0.5, 0.2])


def test_sweep_matches_direct_confusion():
    rng = np.random.default_rng(3)
    p = rng.random((4, 16, 16)).astype(np.float32)
    p[0, 0, :5] = [0.25, 0.5, 0.75, 0.01, 0.99]  # exactly on grid values
    t = rng.random((4, 16, 16)) < 0.3
    s = ThresholdSweep()
    s.add(p[:2], t[:2])
    s.add(p[2:], t[2:])
    for eta, cm in zip(s.grid, s.confusions()):
        direct = ConfusionMatrix()
        for pi, ti in zip(p, t):
            direct = direct + confusion(CSpaceGrid(pi < np.float32(eta)), CSpaceGrid(ti))
        assert cm == direct, eta


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.98), st.floats(0.0, 0.5))
def test_raising_eta_trades_missed_collisions_for_missed_free(seed, lo, step):
    hi = min(lo + step, 0.99)
    rng = np.random.default_rng(seed)
    p = rng.random((8, 8)).astype(np.float32)
    t = CSpaceGrid(rng.random((8, 8)) < 0.5)
    a = confusion(CSpaceGrid(p < np.float32(lo)), t)
    b = confusion(CSpaceGrid(p < np.float32(hi)), t)
    assert b.collision_predicted_free <= a.collision_predicted_free
    assert b.free_predicted_collision >= a.free_predicted_collision


# --- evaluate


@pytest.mark.parametrize("family", list(Family))
def test_oracle_is_perfect(family, tmp_path):
    m = generate_dataset(FamilySpec(family), 8, (0.5, 0.25, 0.25), 2, 32, tmp_path)
    r = evaluate(OracleBackend(), m, "test")
    assert r.f1 == 1.0 and r.collision_positive["f1"] == 1.0
    assert r.confusion.collision_predicted_free == 0 and r.undetected_collision_rate == 0.0


def test_pixel_oracle(manifest):
    assert (OracleBackend().predict_images(np.zeros((16, 16))) == 0.0).all()
    empty = OracleBackend().predict_images(np.ones((2, 16, 16)))
    assert empty.shape == (2, 16, 16) and empty.min() == 0.0 and empty.max() == 1.0  # self-collision only


def test_inverted_predictions_complement_accuracy(manifest):
    rng = np.random.default_rng(2)
    noisy = {k: np.where(rng.random(v.shape) < 0.2, 1.0 - v, v) for k, v in truth_images(manifest, "test").items()}
    inverted = {k: 1.0 - v for k, v in noisy.items()}
    a = evaluate(ArrayBackend(noisy), manifest).free_positive["accuracy"]
    b = evaluate(ArrayBackend(inverted), manifest).free_positive["accuracy"]
    assert 0.7 < a < 0.9 and b == pytest.approx(1.0 - a)
    assert evaluate(ArrayBackend({k: 1.0 - v for k, v in truth_images(manifest, "test").items()}),
                    manifest).free_positive["accuracy"] == 0.0


def test_micro_average_equals_pooled_counts(manifest):
    rng = np.random.default_rng(5)
    table = {k: np.clip(v + rng.normal(0, 0.4, v.shape), 0, 1) for k, v in truth_images(manifest, "test").items()}
    r = evaluate(ArrayBackend(table), manifest, eta=0.5)
    pooled = ConfusionMatrix()
    f1s = []
    for rec in manifest.split("test"):
        cm = confusion(CSpaceGrid(table[rec["id"]] < np.float32(0.5)),
                       CSpaceGrid(load_png(manifest.path(rec, "cspace")) < 0.5))
        pooled = pooled + cm
        f1s.append(metrics(cm)["f1"])
    assert r.confusion == pooled and r.f1 == metrics(pooled)["f1"]
    assert r.macro_f1_free == pytest.approx(np.mean(f1s))


def test_report_shapes(small_ckpt, manifest):
    r = evaluate(small_ckpt, manifest, "test", 0.4)
    d = r.to_dict()
    assert d["eta"] == 0.4 and d["model"] == small_ckpt.weights_digest()
    assert set(d["free_positive"]) >= {"accuracy", "precision", "recall", "f1"}
    assert 0 <= r.undetected_collision_rate <= 1 and 0 <= r.undetected_free_rate <= 1
    fp = r.free_positive
    if fp["precision"] + fp["recall"]:
        assert fp["f1"] == pytest.approx(2 * fp["precision"] * fp["recall"] / (fp["precision"] + fp["recall"]))
    assert "actual Collision" in r.table()


def test_evaluate_errors(small_ckpt, manifest, tmp_path):
    with pytest.raises(ValueError):
        evaluate(small_ckpt, manifest, eta=1.0)
    other = generate_dataset(FamilySpec(), 4, (1.0, 0.0, 0.0), 0, 32, tmp_path)
    with pytest.raises(EvaluationError):
        evaluate(small_ckpt, other, "train")
    with pytest.raises(EvaluationError):
        evaluate(OracleBackend(), other, "test")


def test_evaluate_stable_across_thread_counts(small_ckpt, manifest):
    old = torch.get_num_threads()
    try:
        torch.set_num_threads(1)
        a = evaluate(small_ckpt, manifest, "test", 0.5).to_dict()
        torch.set_num_threads(4)
        b = evaluate(small_ckpt, manifest, "test", 0.5).to_dict()
    finally:
        torch.set_num_threads(old)
    assert a == b


# --- timing


def test_timing_report():
    m = build_model(SMALL, seed=0)
    t = timing_benchmark(m, n_warmup=1, n_runs=1)
    assert t["median_ms"] == pytest.approx(1e3 * t["runs_seconds"][0])
    assert t["us_per_configuration"] == pytest.approx(1e3 * t["median_ms"] / 256)
    assert "cpu_count" in t["hardware"] and t["resolution"] == 16
    with pytest.raises(ValueError):
        timing_benchmark(m, n_runs=0)


def test_timing_records_both_resolutions():
    m = build_model(SMALL, seed=0)
    small = timing_benchmark(m, 1, 3, resolution=16)
    big = timing_benchmark(m, 1, 3, resolution=64)
    assert small["us_per_configuration"] > 0 and big["us_per_configuration"] > 0


# --- protocols


def test_zero_shot_on_source_equals_evaluate(small_ckpt, manifest):
    z = zero_shot_eval(small_ckpt, manifest)
    assert z["weights_digest_before"] == z["weights_digest_after"] == small_ckpt.weights_digest()
    direct = evaluate(small_ckpt, manifest, "test", select_threshold(small_ckpt, manifest).eta)
    assert z["report"].to_dict() == direct.to_dict()
    assert set(z["table"]) == {"F1 (%)", "Missed Clsn (%)", "Missed Free (%)"}


def test_data_size_study_toy(tmp_path):
    m = generate_dataset(FamilySpec(Family.THREE_CIRCLES), 160, (0.75, 0.125, 0.125), 8, 16, tmp_path)
    ckpts = []
    rows = data_size_study(SMALL, m, [50, 100], TrainHyper(lr=1.0, max_epochs=8), checkpoints=ckpts)
    assert [r["Samples"] for r in rows] == [50, 100] and len(ckpts) == 2
    assert ckpts[0].provenance["train_samples"] == 50
    assert rows[1]["F1 (%)"] >= rows[0]["F1 (%)"] - 5.0
    with pytest.raises(EvaluationError):
        data_size_study(SMALL, m, [10_000])


def test_single_size_study_is_a_training_run(manifest):
    hy = TrainHyper(lr=1.0, max_epochs=2)
    n = len(manifest.split("train"))
    rows = data_size_study(SMALL, manifest, [n], hy, order_seed=0)
    ck = train(SMALL, manifest, hy, train_limit=n, train_order_seed=0)
    assert rows[0]["weights_digest"] == ck.weights_digest()
