import io
import json
import logging

import pandas as pd
from django.core.management.base import BaseCommand

from concern.datasets import read_dump
from metrics.analysis import time_metrics
from metrics.baselines import metric_report
from metrics.cli import command_errors, resolve_config, write_output
from metrics.core import check_config_against

logger = logging.getLogger(__name__)


def report_csv(document: dict) -> str:
    """One ``metric,value`` row per entry; nested sections become ``section.metric``."""
    rows = []
    for name, value in document.items():
        if isinstance(value, dict):
            rows.extend((f"{name}.{key}", inner) for key, inner in value.items())
        else:
            rows.append((name, value))
    buffer = io.StringIO()
    pd.DataFrame(rows, columns=["metric", "value"]).to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


class Command(BaseCommand):
    help = "Compute MPCS and the benchmark metrics for one prediction dump"

    def add_arguments(self, parser):
        parser.add_argument(
            "dump",
            type=str,
            help="Path to a prediction dump (#c=...,tag=...,epoch=... header)",
        )
        parser.add_argument(
            "--config",
            type=str,
            default=None,
            help="MPCS config document. Default: settings.MPCS_DEFAULT_CONFIG",
        )
        parser.add_argument(
            "--format",
            choices=["json", "csv"],
            default="json",
            help="Report format. Default: json",
        )
        parser.add_argument(
            "--output",
            type=str,
            default=None,
            help="Write the report to this file instead of stdout",
        )
        parser.add_argument(
            "--timing",
            action="store_true",
            default=False,
            help="Add the average wall time of every metric to the report",
        )
        parser.add_argument(
            "--repeats",
            type=int,
            default=5,
            help="Runs averaged per metric with --timing. Default: 5",
        )

    def handle(self, *args, **options):
        with command_errors():
            cfg = resolve_config(options["config"])
            dump = read_dump(options["dump"], mode=cfg.input_mode)
            check_config_against(cfg, dump.space)
            batch = dump.predictions

            report = metric_report(batch, cfg)
            document = report.model_dump()
            if options["timing"]:
                document["timing"] = time_metrics(batch, cfg, repeats=options["repeats"])

            if options["format"] == "csv":
                text = report_csv(document)
            else:
                text = json.dumps(document, indent=2) + "\n"
            write_output(text, options["output"], self.stdout)

        if options["output"]:
            self.stderr.write(
                self.style.SUCCESS(
                    f"Evaluated {len(batch)} predictions from {options['dump']} "
                    f"into {options['output']}"
                )
            )
