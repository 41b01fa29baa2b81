import math

import numpy as np
from django.test import SimpleTestCase
from pydantic import ValidationError

from metrics.core import (
    ConfigError,
    LabeledPrediction,
    LabelSpace,
    MpcsConfig,
    PredictionBatch,
    PredictionValidationError,
    ReleaseRule,
    as_batch,
    check_config_against,
    dump_config,
    load_config,
    release_matrix,
    validate_batch,
    validate_prediction,
)

SPACE3 = LabelSpace(class_count=3)


def record(probs, label=0, sample_id=0):
    return LabeledPrediction(sample_id=sample_id, true_label=label, probs=tuple(probs))


class LabelSpaceTests(SimpleTestCase):
    def test_needs_two_classes(self):
        with self.assertRaises(ValidationError):
            LabelSpace(class_count=1)

    def test_class_names_must_match_count(self):
        with self.assertRaises(ValidationError):
            LabelSpace(class_count=3, class_names=("a", "b"))

    def test_names_are_presentation_only(self):
        space = LabelSpace(class_count=2, class_names=("cat", "dog"))
        self.assertEqual(space.name_of(1), "dog")
        self.assertEqual(SPACE3.name_of(2), "2")
        self.assertTrue(space.contains(1))
        self.assertFalse(space.contains(2))


class ValidatePredictionTests(SimpleTestCase):
    def test_uniform_logits(self):
        out = validate_prediction(record([0.0, 0.0, 0.0]), SPACE3, mode="logits")
        for p in out.probs:
            self.assertAlmostEqual(p, 1 / 3, places=15)

    def test_normalized_probs_unchanged(self):
        out = validate_prediction(record([0.5, 0.3, 0.2]), SPACE3)
        self.assertEqual(out.probs, (0.5, 0.3, 0.2))

    def test_small_drift_renormalized_with_warning(self):
        with self.assertLogs("metrics.core", level="WARNING"):
            out = validate_prediction(record([0.5005, 0.3, 0.2]), SPACE3)
        self.assertAlmostEqual(math.fsum(out.probs), 1.0, places=12)
        for got, raw in zip(out.probs, (0.5005, 0.3, 0.2)):
            self.assertAlmostEqual(got, raw / 1.0005, places=15)

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        for mode in ("logits", "probs"):
            for _ in range(200):
                values = rng.dirichlet(np.ones(4)) if mode == "probs" else rng.normal(size=4)
                once = validate_prediction(record(values), LabelSpace(class_count=4), mode)
                twice = validate_prediction(once, LabelSpace(class_count=4), "probs")
                self.assertEqual(once, twice)

    def test_softmax_sums_to_one_and_is_equivariant(self):
        rng = np.random.default_rng(5)
        space = LabelSpace(class_count=5)
        for _ in range(100):
            logits = rng.normal(scale=10, size=5)
            perm = rng.permutation(5)
            out = validate_prediction(record(logits), space, "logits").probs
            permuted = validate_prediction(record(logits[perm]), space, "logits").probs
            self.assertAlmostEqual(math.fsum(out), 1.0, places=12)
            np.testing.assert_allclose(np.array(out)[perm], permuted, rtol=0, atol=1e-15)

    def test_large_drift_rejected(self):
        with self.assertRaises(PredictionValidationError) as ctx:
            validate_prediction(record([0.6, 0.3, 0.2], sample_id=17), SPACE3)
        self.assertEqual(ctx.exception.sample_id, 17)

    def test_length_mismatch(self):
        with self.assertRaises(PredictionValidationError):
            validate_prediction(record([0.5, 0.5]), SPACE3)

    def test_non_finite(self):
        with self.assertRaises(PredictionValidationError):
            validate_prediction(record([math.nan, 0.5, 0.5]), SPACE3, "logits")

    def test_label_out_of_range(self):
        with self.assertRaises(PredictionValidationError):
            validate_prediction(record([0.5, 0.3, 0.2], label=3), SPACE3)

    def test_negative_probability(self):
        with self.assertRaises(PredictionValidationError):
            validate_prediction(record([1.1, -0.1, 0.0]), SPACE3)


class ConfigTests(SimpleTestCase):
    def test_case_study_document(self):
        cfg = load_config('{"k": 5, "t": 200, "release_factor": 0.5, "release_list": [[0, 1]]}')
        self.assertEqual(cfg.k, 5)
        self.assertEqual(cfg.t, 200)
        self.assertEqual(
            cfg.release_list, (ReleaseRule(true_label=0, released_predictions=frozenset({1})),)
        )

    def test_minimal_config(self):
        cfg = load_config('{"k": 1, "t": 2, "release_factor": 0, "release_list": []}')
        self.assertEqual(cfg.release_list, ())
        self.assertEqual(cfg.input_mode, "probs")
        self.assertEqual(cfg.log_base, "e")
        self.assertEqual(cfg.ce_reduction, "mean")

    def test_rules_sharing_a_label_merge(self):
        cfg = load_config(
            '{"k": 2, "t": 10, "release_factor": 0.5, "release_list": [[0, 1], [0, 2]]}'
        )
        self.assertEqual(len(cfg.release_list), 1)
        self.assertEqual(cfg.release_list[0].released_predictions, frozenset({1, 2}))
        self.assertTrue(cfg.releases(0, 2))
        self.assertFalse(cfg.releases(2, 0))

    def test_out_of_range_values(self):
        for document in (
            '{"k": 0, "t": 10, "release_factor": 0.5}',
            '{"k": 1, "t": 1, "release_factor": 0.5}',
            '{"k": 1, "t": 10, "release_factor": 1.5}',
            '{"k": 1, "t": 10, "release_factor": -0.1}',
            '{"k": 1, "t": 10, "release_factor": 0.5, "release_list": [[0, 0]]}',
            '{"k": 1, "t": 10, "release_factor": 0.5, "release_list": [[0]]}',
            '{"k": 1, "t": 10, "release_factor": 0.5, "input_mode": "raw"}',
            "not json",
        ):
            with self.subTest(document=document), self.assertRaises(ConfigError):
                load_config(document)

    def test_round_trip(self):
        cfg = MpcsConfig(
            k=3,
            t=50,
            release_factor=0.25,
            release_list=[[2, 0, 1], [0, 1]],
            input_mode="logits",
            log_base="10",
            ce_reduction="sum",
        )
        self.assertEqual(load_config(dump_config(cfg)), cfg)

    def test_label_space_checks(self):
        cfg = MpcsConfig(k=4, t=10, release_factor=0.5)
        with self.assertRaises(ConfigError):
            check_config_against(cfg, SPACE3)
        cfg = MpcsConfig(k=2, t=10, release_factor=0.5, release_list=[[0, 5]])
        with self.assertRaises(ConfigError):
            check_config_against(cfg, SPACE3)
        check_config_against(MpcsConfig(k=3, t=10, release_factor=0.5), SPACE3)

    def test_release_matrix(self):
        cfg = MpcsConfig(k=1, t=10, release_factor=0.5, release_list=[[0, 1], [2, 0, 1]])
        expected = np.array(
            [[False, True, False], [False, False, False], [True, True, False]]
        )
        np.testing.assert_array_equal(cfg.release_matrix(3), expected)
        np.testing.assert_array_equal(release_matrix(cfg.release_list, 3), expected)


class PredictionBatchTests(SimpleTestCase):
    def test_from_predictions(self):
        batch = as_batch([record([0.2, 0.8], label=1, sample_id=4), record([1.0, 0.0])])
        self.assertEqual(len(batch), 2)
        self.assertEqual(batch.class_count, 2)
        np.testing.assert_array_equal(batch.predicted_labels(), [1, 0])
        self.assertFalse(batch.probs.flags.writeable)
        self.assertEqual(list(batch.rows())[0], record([0.2, 0.8], label=1, sample_id=4))

    def test_width_mismatch(self):
        with self.assertRaises(PredictionValidationError):
            as_batch([record([0.5, 0.5]), record([0.2, 0.3, 0.5], sample_id=1)])

    def test_id_order(self):
        batch = as_batch([record([0.5, 0.5], sample_id=i) for i in (3, 1, 2)])
        np.testing.assert_array_equal(batch.in_id_order().sample_ids, [1, 2, 3])

    def test_row_counts_must_match(self):
        with self.assertRaises(ValidationError):
            PredictionBatch(sample_ids=[0, 1], labels=[0], probs=[[0.5, 0.5]])

    def test_validate_batch_matches_records(self):
        rng = np.random.default_rng(11)
        space = LabelSpace(class_count=4)
        for mode in ("logits", "probs"):
            values = rng.normal(size=(50, 4)) if mode == "logits" else rng.dirichlet(np.ones(4), 50)
            preds = [
                record(row, label=int(rng.integers(4)), sample_id=i)
                for i, row in enumerate(values)
            ]
            batch = validate_batch(preds, space, mode)
            for row, pred in zip(batch.probs, preds):
                np.testing.assert_allclose(
                    row, validate_prediction(pred, space, mode).probs, rtol=0, atol=1e-15
                )

    def test_validate_batch_errors(self):
        with self.assertRaises(PredictionValidationError) as ctx:
            validate_batch(
                [record([0.5, 0.3, 0.2]), record([0.7, 0.3, 0.2], sample_id=9)], SPACE3
            )
        self.assertEqual(ctx.exception.sample_id, 9)
        with self.assertRaises(PredictionValidationError):
            validate_batch([record([0.5, 0.5])], SPACE3)
        with self.assertRaises(PredictionValidationError):
            validate_batch([record([0.5, 0.3, 0.2], label=4)], SPACE3)
