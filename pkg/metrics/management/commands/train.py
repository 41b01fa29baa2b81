import json
import logging
from pathlib import Path

import torch
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from concern.datasets import (
    LabelSchema,
    SyntheticSpec,
    generate_synthetic,
    load_csv_dataset,
    load_idx,
)
from concern.training import (
    ModelConfig,
    TrainConfig,
    TrainingDivergedError,
    train,
    write_training_log,
)
from metrics.analysis import BENCHMARK_METRICS, similarity_table, trajectories_from_records
from metrics.cli import EXIT_VALIDATION, command_errors, resolve_config

logger = logging.getLogger(__name__)

# Command-line flags that override fields of the train config document
TRAIN_OVERRIDES = {
    "epochs": "epochs",
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "optimizer": "optimizer",
    "seed": "seed",
}


class Command(BaseCommand):
    help = "Train the MLP classifier, dumping predictions and metrics every epoch"

    def add_arguments(self, parser):
        source = parser.add_argument_group("dataset (one of)")
        source.add_argument("--dataset", type=str, default=None, help="CSV dataset path")
        source.add_argument(
            "--idx-images", type=str, default=None, help="IDX image file (may be .gz)"
        )
        source.add_argument(
            "--idx-labels", type=str, default=None, help="IDX label file (may be .gz)"
        )
        source.add_argument(
            "--synthetic",
            action="store_true",
            default=False,
            help="Generate Gaussian-blob data from the --classes/--per-class/... flags",
        )

        parser.add_argument(
            "--label-column", type=str, default="label", help="CSV label column. Default: label"
        )
        parser.add_argument(
            "--normalize",
            action="store_true",
            default=False,
            help="Z-score CSV feature columns",
        )
        parser.add_argument("--classes", type=int, default=3, help="Synthetic classes. Default: 3")
        parser.add_argument(
            "--per-class", type=int, default=200, help="Synthetic samples per class. Default: 200"
        )
        parser.add_argument(
            "--features", type=int, default=4, help="Synthetic feature count. Default: 4"
        )
        parser.add_argument(
            "--spread", type=float, default=1.5, help="Synthetic center spread. Default: 1.5"
        )
        parser.add_argument(
            "--noise", type=float, default=1.0, help="Synthetic noise std. Default: 1.0"
        )
        parser.add_argument(
            "--pair",
            type=int,
            nargs=2,
            action="append",
            default=None,
            metavar=("A", "B"),
            help="Confusable synthetic label pair; repeatable",
        )
        parser.add_argument(
            "--data-seed", type=int, default=0, help="Synthetic data seed. Default: 0"
        )

        parser.add_argument(
            "--train-config", type=str, default=None, help="Train config JSON document"
        )
        parser.add_argument("--epochs", type=int, default=None)
        parser.add_argument("--lr", type=float, default=None)
        parser.add_argument("--batch-size", type=int, default=None)
        parser.add_argument("--optimizer", choices=["sgd", "adam"], default=None)
        parser.add_argument("--seed", type=int, default=None)
        parser.add_argument(
            "--hidden",
            type=int,
            nargs="*",
            default=None,
            help="Hidden layer sizes. Default: 32",
        )
        parser.add_argument(
            "--modulate",
            choices=["on", "off"],
            default=None,
            help="MPCS-driven learning rate. Default: the train config's lr_modulation",
        )
        parser.add_argument(
            "--config",
            type=str,
            default=None,
            help="MPCS config document. Default: settings.MPCS_DEFAULT_CONFIG",
        )
        parser.add_argument(
            "--output-dir",
            type=str,
            default=None,
            help="Where dumps and logs go. Default: settings.MPCS_OUTPUT_DIR",
        )
        parser.add_argument(
            "--tag", type=str, default="", help="Model tag written into every dump header"
        )

    def load_dataset(self, options):
        chosen = [
            bool(options["dataset"]),
            bool(options["idx_images"] or options["idx_labels"]),
            options["synthetic"],
        ]
        if sum(chosen) != 1:
            raise CommandError(
                "give exactly one of --dataset, --idx-images/--idx-labels, --synthetic",
                returncode=EXIT_VALIDATION,
            )
        if options["dataset"]:
            return load_csv_dataset(
                options["dataset"],
                LabelSchema(column=options["label_column"]),
                normalize=options["normalize"],
            )
        if options["synthetic"]:
            spec = SyntheticSpec(
                seed=options["data_seed"],
                class_count=options["classes"],
                per_class=options["per_class"],
                feature_count=options["features"],
                spread=options["spread"],
                noise_std=options["noise"],
                confusable_pairs=tuple(tuple(p) for p in options["pair"] or ()),
            )
            return generate_synthetic(spec)
        if not (options["idx_images"] and options["idx_labels"]):
            raise CommandError(
                "--idx-images and --idx-labels go together", returncode=EXIT_VALIDATION
            )
        return load_idx(options["idx_images"], options["idx_labels"])

    def train_config(self, options) -> TrainConfig:
        document = {}
        if options["train_config"]:
            document = json.loads(Path(options["train_config"]).read_text(encoding="utf-8"))
        for flag, field in TRAIN_OVERRIDES.items():
            if options[flag] is not None:
                document[field] = options[flag]
        if options["modulate"] is not None:
            document["lr_modulation"] = "mpcs" if options["modulate"] == "on" else "off"
        return TrainConfig.model_validate(document)

    def handle(self, *args, **options):
        torch.set_num_threads(settings.MPCS_THREADS)
        output_dir = Path(options["output_dir"] or settings.MPCS_OUTPUT_DIR)

        with command_errors():
            train_config = self.train_config(options)
            mpcs_config = resolve_config(options["config"])
            dataset = self.load_dataset(options)
            hidden = options["hidden"]
            model_config = ModelConfig(
                input_dim=dataset.feature_count,
                hidden=(32,) if hidden is None else tuple(hidden),
                class_count=dataset.space.class_count,
            )
            self.stdout.write(
                f"Training on {len(dataset)} samples, {dataset.feature_count} features, "
                f"{dataset.space.class_count} classes for {train_config.epochs} epochs"
            )
            output_dir.mkdir(parents=True, exist_ok=True)

            try:
                records = train(
                    dataset,
                    model_config,
                    train_config,
                    mpcs_config,
                    dump_dir=output_dir,
                    tag=options["tag"],
                )
            except TrainingDivergedError as exc:
                write_training_log(output_dir / "training_log.csv", exc.records)
                self.stderr.write(
                    self.style.ERROR(
                        f"Training diverged in epoch {exc.epoch}; "
                        f"{len(exc.records)} healthy checkpoints kept in {output_dir}"
                    )
                )
                raise

            write_training_log(output_dir / "training_log.csv", records)
            if len(records) >= 2:
                names = ("mpcs", *BENCHMARK_METRICS)
                table = similarity_table(trajectories_from_records(records, names))
            else:
                self.stdout.write(
                    self.style.WARNING("A single epoch has no trajectory to correlate")
                )
                table = {}
            (output_dir / "similarity.json").write_text(
                json.dumps(table, indent=2) + "\n", encoding="utf-8"
            )

        final = records[-1].report
        self.stdout.write(
            self.style.SUCCESS(
                f"Finished: accuracy {final.accuracy:.4f}, MPCS {final.mpcs:.6f}, "
                f"{final.dangerous_count} dangerous cases. Output in {output_dir}"
            )
        )
