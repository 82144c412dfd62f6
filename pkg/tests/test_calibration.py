import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docre.autodiff import sigmoid_array
from docre.calibration import (CalibrationError, TemperatureModel, _bce_logits, ace, binned_table,
                               calibration_report, cda_temperatures, ece, fit_cda_temperature,
                               fit_temperature, frequency_groups, reliability_csv)
from docre.metrics import PredictionSet, best_threshold


def _ece_oracle(conf, correct, n_bins):
    total, n = 0.0, len(conf)
    for b in range(n_bins):
        lo, hi = b / n_bins, (b + 1) / n_bins
        members = [i for i in range(n) if lo <= conf[i] < hi or (b == n_bins - 1 and conf[i] == 1.0)]
        if members:
            acc = sum(correct[i] for i in members) / len(members)
            c = sum(conf[i] for i in members) / len(members)
            total += len(members) / n * abs(acc - c)
    return total


def _ace_oracle(conf, correct, classes, n_ranges):
    gaps = []
    for k in sorted(set(classes)):
        idx = sorted((i for i in range(len(conf)) if classes[i] == k), key=lambda i: (conf[i], i))
        r = min(n_ranges, len(idx))
        base, extra = divmod(len(idx), r)
        start = 0
        for j in range(r):
            size = base + (1 if j < extra else 0)
            part = idx[start:start + size]
            start += size
            gaps.append(abs(sum(correct[i] for i in part) / size - sum(conf[i] for i in part) / size))
    return sum(gaps) / len(gaps)


def _calibrated(rng, n, scale=2.0, classes=1):
    z = rng.normal(0, scale, size=(n, classes))
    y = (rng.random((n, classes)) < sigmoid_array(z)).astype(np.float64)
    return z, y


class TestECE:
    def test_hand_example(self):
        assert ece([0.8] * 10, [1] * 6 + [0] * 4) == pytest.approx(0.2, abs=1e-15)

    def test_perfect(self):
        assert ece([0.25, 0.25, 0.25, 0.25, 1.0], [1, 0, 0, 0, 1]) == 0.0

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(150):
            n = int(rng.integers(1, 80))
            conf = rng.random(n)
            conf[rng.random(n) < 0.1] = 1.0
            conf[rng.random(n) < 0.1] = 0.3
            correct = (rng.random(n) < 0.4).astype(float)
            bins = int(rng.integers(1, 15))
            assert abs(ece(conf, correct, bins) - _ece_oracle(conf.tolist(), correct.tolist(), bins)) < 1e-12

    def test_empty_and_range(self):
        with pytest.raises(CalibrationError):
            ece([], [])
        with pytest.raises(CalibrationError):
            ece([1.2], [1])

    def test_zero_iff_each_bin_matches(self):
        t = binned_table([0.05, 0.05, 0.55, 0.55], [0, 0.1, 1, 0.1], 10)
        assert t.gap() == 0.0
        np.testing.assert_array_equal(t.count[[0, 5]], [2, 2])


class TestACE:
    def test_hand_example(self):
        assert ace([0.1, 0.2, 0.9, 1.0], [0, 0, 1, 1], [0] * 4, 2) == pytest.approx(0.1, abs=1e-15)

    def test_single_class_matching(self):
        assert ace([0.5, 0.5], [1, 0], [3, 3], 1) == 0.0

    def test_fewer_instances_than_ranges(self):
        assert ace([0.2, 0.6], [0, 1], [0, 0], 10) == pytest.approx((0.2 + 0.4) / 2)

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans(), st.integers(0, 3)), min_size=1, max_size=100),
           st.integers(1, 12))
    def test_matches_naive(self, rows, n_ranges):
        conf, correct, classes = (list(c) for c in zip(*rows))
        correct = [float(c) for c in correct]
        got = ace(conf, correct, classes, n_ranges)
        assert abs(got - _ace_oracle(conf, correct, classes, n_ranges)) < 1e-12


class TestTemperature:
    def test_calibrated_data_gives_one(self):
        z, y = _calibrated(np.random.default_rng(1), 40000)
        assert fit_temperature(z, y).temperature == pytest.approx(1.0, abs=0.05)

    def test_doubled_logits_double_t(self):
        rng = np.random.default_rng(2)
        z, y = _calibrated(rng, 5000)
        z = z * 0.7
        t1 = fit_temperature(z, y).temperature
        t2 = fit_temperature(2 * z, y).temperature
        assert t2 == pytest.approx(2 * t1, rel=1e-5)

    def test_identity_temperature(self):
        z = np.random.default_rng(3).normal(size=(5, 3))
        np.testing.assert_array_equal(TemperatureModel("none").probabilities(z), sigmoid_array(z))

    def test_dev_bce_not_increased(self):
        rng = np.random.default_rng(4)
        z, y = _calibrated(rng, 3000)
        for factor in (0.3, 1.0, 3.0):
            m = fit_temperature(z * factor, y)
            assert _bce_logits(m.apply(z * factor), y) <= _bce_logits(z * factor, y)

    def test_degenerate_dev(self):
        with pytest.raises(CalibrationError):
            fit_temperature(np.ones((3, 2)), np.zeros((3, 2)))

    def test_threshold_f1_preserved(self):
        rng = np.random.default_rng(5)
        z, y = _calibrated(rng, 400, scale=3.0, classes=4)
        z = 2.5 * z
        m = fit_temperature(z, y)

        def f1(probs):
            n = probs.size
            idx = np.zeros(n, dtype=np.int64)
            ps = PredictionSet(idx, idx, idx, idx, probs.reshape(-1), y.reshape(-1) > 0.5, ["d"], ["R"])
            return best_threshold(ps)[1]

        assert abs(f1(m.probabilities(z)) - f1(sigmoid_array(z))) < 1e-9


class TestCDA:
    def test_formula(self):
        t = cda_temperatures(2.0, 0.5, np.array([100, 10, 0]))
        np.testing.assert_allclose(t, [2.0, 2.0 * (1 + 0.5 * np.log(10)), 2.0 * (1 + 0.5 * np.log(100))])

    def test_alpha_zero_is_ts(self):
        np.testing.assert_array_equal(cda_temperatures(1.7, 0.0, np.array([1, 50, 900])), 1.7)

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(6)
        z, y = _calibrated(rng, 500, classes=3)
        m = fit_cda_temperature(z * 2, y, np.array([40, 40, 40]))
        assert np.all(m.class_temperatures == m.class_temperatures[0])

    def test_never_worse_than_ts_on_long_tail(self):
        rng = np.random.default_rng(7)
        z, y = _calibrated(rng, 3000, classes=5)
        # rarer classes are more over-confident
        z = z * np.array([1.0, 1.5, 2.0, 3.0, 4.0])
        freqs = np.array([1000, 300, 60, 10, 2])
        ts, cda = fit_temperature(z, y), fit_cda_temperature(z, y, freqs)
        assert _bce_logits(cda.apply(z), y) <= _bce_logits(ts.apply(z), y) + 1e-9
        assert cda.alpha > 0

    def test_frequency_shape_checked(self):
        with pytest.raises(CalibrationError):
            fit_cda_temperature(np.zeros((2, 3)), np.array([[0, 1, 0], [1, 0, 0]]), np.ones(2))


class TestGroups:
    def test_partition(self):
        ids = [f"R{k}" for k in range(10)] + ["NA"]
        counts = {f"R{k}": 100 - k for k in range(10)}
        counts["R9"] = 1000
        g = frequency_groups(ids, 10, counts, top=7)
        assert g["NA"] == [10] and 9 in g["top-7"] and len(g["bottom-3"]) == 3
        assert sorted(sum(g.values(), [])) == list(range(11))

    def test_group_counts_sum_to_coordinates(self):
        rng = np.random.default_rng(8)
        probs, gold = rng.random((30, 6)), (rng.random((30, 6)) < 0.2).astype(float)
        groups = frequency_groups([f"R{k}" for k in range(5)] + ["NA"], 5, {}, top=2)
        report = calibration_report(probs, gold, groups)
        assert sum(t.total for t in report.groups.values()) == probs.size == report.instances

    def test_empty_group(self):
        t = binned_table(np.zeros(0), np.zeros(0), 10)
        assert t.total == 0 and t.gap() == 0.0

    def test_calibrated_bins_track_accuracy(self):
        z, y = _calibrated(np.random.default_rng(9), 200000)
        t = binned_table(sigmoid_array(z).reshape(-1), y.reshape(-1), 10)
        full = t.count > 5000
        np.testing.assert_allclose(t.accuracy[full], t.confidence[full], atol=0.02)

    def test_report_bytes_reproducible(self):
        rng = np.random.default_rng(10)
        probs, gold = rng.random((20, 3)), (rng.random((20, 3)) < 0.3).astype(float)
        groups = {"NA": [2], "top-2": [0, 1]}
        a = calibration_report(probs, gold, groups)
        b = calibration_report(probs.copy(), gold.copy(), groups)
        assert reliability_csv(a.groups) == reliability_csv(b.groups)
        assert a.to_json() == b.to_json()

    def test_predicted_population(self):
        rng = np.random.default_rng(11)
        probs, gold = rng.random((20, 3)), (rng.random((20, 3)) < 0.3).astype(float)
        mask = probs > 0.5
        r = calibration_report(probs, gold, {"all": [0, 1, 2]}, mask=mask)
        assert r.instances == int(mask.sum())
        assert r.ece == pytest.approx(ece(probs[mask], gold[mask]), abs=1e-15)
