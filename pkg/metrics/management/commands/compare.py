import json
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from concern.datasets import dump_paths, read_dump
from metrics.analysis import (
    METRIC_DIRECTIONS,
    CheckpointRecord,
    select_checkpoint,
    tradeoff_report,
)
from metrics.baselines import metric_report
from metrics.cli import EXIT_IO, EXIT_VALIDATION, command_errors, resolve_config, write_output
from metrics.core import check_config_against

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = (
        "Select the best checkpoint of a run per metric and compare each "
        "benchmark choice against the MPCS choice"
    )

    def add_arguments(self, parser):
        parser.add_argument(
            "dump_dir",
            type=str,
            help="Directory holding one prediction dump (*.csv) per checkpoint",
        )
        parser.add_argument(
            "--config",
            type=str,
            default=None,
            help="MPCS config document. Default: settings.MPCS_DEFAULT_CONFIG",
        )
        parser.add_argument(
            "--select-by",
            nargs="+",
            choices=list(METRIC_DIRECTIONS),
            default=None,
            help="Metrics to select checkpoints by. Default: every metric",
        )
        parser.add_argument(
            "--output",
            type=str,
            default=None,
            help="Write the JSON report to this file instead of stdout",
        )

    def handle(self, *args, **options):
        metrics = options["select_by"] or list(METRIC_DIRECTIONS)
        if "mpcs" not in metrics:
            metrics = ["mpcs", *metrics]

        with command_errors():
            cfg = resolve_config(options["config"])
            if not Path(options["dump_dir"]).is_dir():
                raise CommandError(
                    f"{options['dump_dir']}: not a directory", returncode=EXIT_IO
                )
            paths = dump_paths(options["dump_dir"])
            if len(paths) < 2:
                raise CommandError(
                    f"{options['dump_dir']}: need at least 2 dumps, found {len(paths)}",
                    returncode=EXIT_VALIDATION,
                )

            records = []
            for path in paths:
                dump = read_dump(path, mode=cfg.input_mode)
                check_config_against(cfg, dump.space)
                records.append(
                    CheckpointRecord(
                        epoch=dump.epoch,
                        report=metric_report(dump.predictions, cfg),
                        predictions=dump.predictions,
                        dump_path=path,
                    )
                )
                self.stderr.write(f"Evaluated {path.name} (epoch {dump.epoch})")

            epochs = [r.epoch for r in records]
            if len(set(epochs)) != len(epochs):
                raise CommandError(
                    f"{options['dump_dir']}: dumps repeat an epoch ({sorted(epochs)})",
                    returncode=EXIT_VALIDATION,
                )
            records.sort(key=lambda r: r.epoch)

            selected = {name: select_checkpoint(records, name) for name in metrics}
            chosen = selected["mpcs"]
            tradeoffs = {
                name: tradeoff_report(record, chosen, cfg.release_list).model_dump()
                for name, record in selected.items()
                if name != "mpcs"
            }
            document = {
                "checkpoints": [
                    {"epoch": r.epoch, "dump": Path(r.dump_path).name, **r.report.model_dump()}
                    for r in records
                ],
                "selection": {name: record.epoch for name, record in selected.items()},
                "tradeoffs": tradeoffs,
            }
            write_output(json.dumps(document, indent=2) + "\n", options["output"], self.stdout)

        self.stderr.write(
            self.style.SUCCESS(
                f"Compared {len(records)} checkpoints; MPCS selects epoch {chosen.epoch}"
            )
        )
