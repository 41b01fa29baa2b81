import math

import numpy as np
from django.test import SimpleTestCase

from metrics.core import (
    LabeledPrediction,
    MpcsConfig,
    PredictionBatch,
    PredictionValidationError,
)
from metrics.metapattern import build_meta_pattern
from metrics.scoring import (
    PUNISHMENT_FLOOR,
    ce_limit_check,
    concern_degree,
    dataset_mpcs,
    score_sample,
    score_samples,
)

TRACED_SCORE = -math.log(7 / 9)


def record(probs, label=0, sample_id=0):
    return LabeledPrediction(sample_id=sample_id, true_label=label, probs=tuple(probs))


def naive_score(label, probs, k, t, release_factor, released):
    """Direct evaluation of the score definition, one sample at a time."""
    c = len(probs)
    top = sorted(range(c), key=lambda lab: (-probs[lab], lab))[:k]
    levels = []
    for lab in top:
        raw = max(t - math.floor(t * probs[lab]) - 1, 0)
        levels.append(t - raw - 1 if lab == label else raw)

    if label in top:
        wrong = {
            lab: (release_factor if lab in released.get(label, ()) else 1.0)
            for lab in top
            if lab != label
        }
        total = 2 * sum(wrong.values())
        if total > 0:
            share = {lab: w / total for lab, w in wrong.items()}
            share[label] = 0.5
        elif k == 1:
            share = {label: 1.0}
        else:
            share = {lab: 0.5 / (k - 1) for lab in wrong}
            share[label] = 0.5
    else:
        share = {lab: 1 / k for lab in top}

    score = 0.0
    for lab, level in zip(top, levels):
        level = level if level else PUNISHMENT_FLOOR
        score += share[lab] * -math.log(level / (t - 1))
    return score


def random_case(rng):
    c = int(rng.integers(3, 11))
    k = int(rng.integers(1, c + 1))
    t = int(rng.integers(2, 501))
    release_factor = float(rng.choice([0.0, 0.5, 1.0]))
    rows = []
    for true_label in range(c):
        if rng.random() < 0.5:
            others = [lab for lab in range(c) if lab != true_label]
            picked = rng.choice(others, size=int(rng.integers(1, len(others) + 1)), replace=False)
            rows.append([true_label, *(int(x) for x in picked)])
    cfg = MpcsConfig(k=k, t=t, release_factor=release_factor, release_list=rows)
    return c, cfg


def random_batch(rng, c, n):
    if rng.random() < 0.3:
        # coarse values produce ties and exact interval boundaries
        weights = rng.integers(0, 5, size=(n, c)).astype(float)
        weights[weights.sum(axis=1) == 0, 0] = 1.0
        probs = weights / weights.sum(axis=1, keepdims=True)
    else:
        probs = rng.dirichlet(np.full(c, 0.5), size=n)
    return PredictionBatch(
        sample_ids=np.arange(n), labels=rng.integers(0, c, size=n), probs=probs
    )


class ConcernDegreeTests(SimpleTestCase):
    def test_released_label(self):
        cfg = MpcsConfig(k=3, t=10, release_factor=0.5, release_list=[[0, 1]])
        degree = concern_degree(build_meta_pattern(record([0.6, 0.3, 0.1]), cfg), cfg)
        self.assertEqual(degree.weights, (1.5, 0.5, 1.0))
        np.testing.assert_allclose(degree.normalized, [0.5, 1 / 6, 1 / 3], rtol=0, atol=1e-15)

    def test_correct_label_missing(self):
        cfg = MpcsConfig(k=3, t=10, release_factor=0.5, release_list=[[0, 1]])
        degree = concern_degree(build_meta_pattern(record([0.1, 0.4, 0.3, 0.2]), cfg), cfg)
        self.assertEqual(degree.weights, (1.0, 1.0, 1.0))
        np.testing.assert_allclose(degree.normalized, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_release_factor_one(self):
        cfg = MpcsConfig(k=3, t=10, release_factor=1.0, release_list=[[0, 1, 2]])
        degree = concern_degree(build_meta_pattern(record([0.6, 0.3, 0.1]), cfg), cfg)
        self.assertEqual(degree.weights, (2.0, 1.0, 1.0))
        self.assertEqual(degree.normalized, (0.5, 0.25, 0.25))

    def test_rules_are_directional(self):
        cfg = MpcsConfig(k=3, t=10, release_factor=0.5, release_list=[[1, 0]])
        degree = concern_degree(build_meta_pattern(record([0.6, 0.3, 0.1]), cfg), cfg)
        self.assertEqual(degree.weights, (2.0, 1.0, 1.0))

    def test_zero_weight_limit(self):
        cfg = MpcsConfig(k=3, t=10, release_factor=0.0, release_list=[[0, 1, 2]])
        degree = concern_degree(build_meta_pattern(record([0.6, 0.3, 0.1]), cfg), cfg)
        self.assertEqual(degree.weights, (0.0, 0.0, 0.0))
        self.assertEqual(degree.normalized, (0.5, 0.25, 0.25))

        single = MpcsConfig(k=1, t=10, release_factor=0.5)
        degree = concern_degree(build_meta_pattern(record([0.6, 0.3, 0.1]), single), single)
        self.assertEqual(degree.normalized, (1.0,))


class SampleScoreTests(SimpleTestCase):
    def test_traced_sample(self):
        cfg = MpcsConfig(k=2, t=10, release_factor=0.5, release_list=[[0, 1]])
        score = score_sample(record([0.7, 0.2, 0.1]), cfg)
        self.assertAlmostEqual(score.value, TRACED_SCORE, places=12)
        self.assertAlmostEqual(score.value, 0.251314, places=6)

    def test_top_levels_score_zero(self):
        cfg = MpcsConfig(k=3, t=10, release_factor=0.5)
        self.assertEqual(score_sample(record([1.0, 0.0, 0.0]), cfg).value, 0.0)

    def test_level_zero_is_floored(self):
        cfg = MpcsConfig(k=1, t=10, release_factor=0.5)
        score = score_sample(record([0.0, 1.0, 0.0]), cfg)
        self.assertAlmostEqual(score.value, math.log(9e7), places=9)
        self.assertAlmostEqual(score.value, 18.3153, places=4)

    def test_correct_confidence_never_hurts(self):
        cfg = MpcsConfig(k=2, t=20, release_factor=0.5, release_list=[[0, 2]])
        previous = None
        for p in np.linspace(0.4, 1.0, 61):
            value = score_sample(record([p, (1 - p) * 0.6, (1 - p) * 0.4]), cfg).value
            if previous is not None:
                self.assertLessEqual(value, previous + 1e-12)
            previous = value


class DatasetMpcsTests(SimpleTestCase):
    def test_single_sample(self):
        cfg = MpcsConfig(k=2, t=10, release_factor=0.5, release_list=[[0, 1]])
        self.assertAlmostEqual(dataset_mpcs([record([0.7, 0.2, 0.1])], cfg), TRACED_SCORE, 12)

    def test_mean_of_two(self):
        cfg = MpcsConfig(k=1, t=10, release_factor=0.5)
        preds = [record([0.0, 1.0, 0.0]), record([0.7, 0.2, 0.1], sample_id=1)]
        a = score_sample(preds[0], cfg).value
        b = score_sample(preds[1], cfg).value
        self.assertAlmostEqual(dataset_mpcs(preds, cfg), (a + b) / 2, places=12)

    def test_perfect_dataset(self):
        cfg = MpcsConfig(k=3, t=200, release_factor=0.5)
        preds = [record(np.eye(3)[i % 3], label=i % 3, sample_id=i) for i in range(9)]
        self.assertEqual(dataset_mpcs(preds, cfg), 0.0)

    def test_empty(self):
        cfg = MpcsConfig(k=1, t=10, release_factor=0.5)
        with self.assertRaises(PredictionValidationError):
            dataset_mpcs([], cfg)


class OracleTests(SimpleTestCase):
    def test_matches_naive_evaluation(self):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 10_000:
            c, cfg = random_case(rng)
            batch = random_batch(rng, c, 50)
            released = {r.true_label: r.released_predictions for r in cfg.release_list}
            fast = score_samples(batch, cfg)
            for row, (label, probs) in enumerate(zip(batch.labels, batch.probs)):
                expected = naive_score(
                    int(label), probs.tolist(), cfg.k, cfg.t, cfg.release_factor, released
                )
                self.assertAlmostEqual(fast[row], expected, delta=1e-12)
                stepwise = score_sample(
                    record(probs.tolist(), label=int(label), sample_id=row), cfg
                ).value
                self.assertAlmostEqual(stepwise, expected, delta=1e-12)
            checked += len(batch)


class InvariantTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(99)

    def cases(self, rounds=200, n=50):
        for _ in range(rounds):
            c, cfg = random_case(self.rng)
            yield c, cfg, random_batch(self.rng, c, n)

    def test_correct_position_gets_half(self):
        for c, cfg, batch in self.cases():
            if cfg.k < 2:
                continue
            for pred in batch.rows():
                pattern = build_meta_pattern(pred, cfg)
                if pattern.correct_index is None:
                    continue
                degree = concern_degree(pattern, cfg)
                self.assertAlmostEqual(degree.normalized[pattern.correct_index], 0.5, delta=1e-12)
                self.assertAlmostEqual(sum(degree.normalized), 1.0, delta=1e-12)

    def test_levels_in_range_and_scores_non_negative(self):
        for c, cfg, batch in self.cases(rounds=100):
            for pred in batch.rows():
                pattern = build_meta_pattern(pred, cfg)
                self.assertTrue(all(0 <= level <= cfg.t - 1 for level in pattern.conf))
            scores = score_samples(batch, cfg)
            self.assertTrue((scores >= 0).all())
            self.assertTrue(np.isfinite(scores).all())

    def test_release_factor_one_disables_rules(self):
        for c, cfg, batch in self.cases():
            with_rules = cfg.model_copy(update={"release_factor": 1.0})
            without = MpcsConfig(k=cfg.k, t=cfg.t, release_factor=1.0)
            np.testing.assert_array_equal(
                score_samples(batch, with_rules), score_samples(batch, without)
            )

    def test_all_released_ignores_release_factor(self):
        for c, cfg, batch in self.cases():
            everything = [[lab, *(o for o in range(c) if o != lab)] for lab in range(c)]
            scores = [
                score_samples(
                    batch,
                    MpcsConfig(k=cfg.k, t=cfg.t, release_factor=f, release_list=everything),
                )
                for f in (0.0, 0.3, 1.0)
            ]
            np.testing.assert_allclose(scores[0], scores[1], rtol=0, atol=1e-12)
            np.testing.assert_allclose(scores[0], scores[2], rtol=0, atol=1e-12)

    def test_permutation_invariance(self):
        for c, cfg, batch in self.cases():
            order = self.rng.permutation(len(batch))
            shuffled = PredictionBatch(
                sample_ids=batch.sample_ids[order],
                labels=batch.labels[order],
                probs=batch.probs[order],
            )
            self.assertEqual(dataset_mpcs(shuffled, cfg), dataset_mpcs(batch, cfg))


class CrossEntropyLimitTests(SimpleTestCase):
    def test_examples(self):
        result = ce_limit_check([record([0.9, 0.1]), record([1.0, 0.0], sample_id=1)])
        (mpcs_a, ce_a), (mpcs_b, ce_b) = result.pairs
        self.assertLessEqual(abs(mpcs_a - ce_a), 1e-5)
        self.assertEqual(mpcs_b, 0.0)
        self.assertEqual(ce_b, 0.0)

    def test_low_confidence(self):
        probs = [0.1] + [0.9 / 10] * 10
        (mpcs, ce), = ce_limit_check([record(probs)]).pairs
        self.assertLessEqual(abs(mpcs - ce), 1e-4)

    def test_wrong_top_one_excluded(self):
        result = ce_limit_check([record([0.9, 0.1]), record([0.2, 0.8], sample_id=5)])
        self.assertEqual(result.sample_ids, (0,))
        self.assertEqual(result.excluded, (5,))

    def test_random_correct_samples(self):
        rng = np.random.default_rng(17)
        preds = []
        while len(preds) < 1000:
            c = int(rng.integers(2, 11))
            p = rng.uniform(0.1, 1.0)
            rest = (1 - p) * rng.dirichlet(np.ones(c - 1))
            if rest.max(initial=0.0) >= p:
                continue
            label = int(rng.integers(c))
            probs = np.insert(rest, label, p)
            preds.append(record(probs, label=label, sample_id=len(preds)))
        for c_count in {p.class_count for p in preds}:
            group = [p for p in preds if p.class_count == c_count]
            result = ce_limit_check(group)
            self.assertEqual(result.excluded, ())
            for mpcs, ce in result.pairs:
                self.assertLessEqual(abs(mpcs - ce), 1e-4)
