import logging

from django.core.management.base import BaseCommand, CommandError

from lab.services.experiment import ExitCode, ExperimentError, load_config, record_run, sweep

logger = logging.getLogger(__name__)


def _parse_values(text):
    values = []
    for item in text.split(','):
        item = item.strip()
        if item:
            try:
                values.append(float(item))
            except ValueError:
                raise CommandError(f"Sweep value '{item}' is not a number", returncode=ExitCode.INVALID_INPUT)
    return values


class Command(BaseCommand):
    help = 'Run one experiment per value of a numeric config field and summarise the runs'

    def add_arguments(self, parser):
        parser.add_argument('config', help='Path to the template experiment config')
        parser.add_argument('--axis', required=True, help='Numeric config field to vary')
        parser.add_argument('--values', default='', help='Comma separated values, e.g. 0.5,1,2')
        parser.add_argument('--out', dest='out', default=None, help='Root directory for the per-run outputs')
        parser.add_argument('--workers', type=int, default=1, help='Parallel worker processes')

    def handle(self, *args, **options):
        values = _parse_values(options['values'])
        try:
            config = load_config(options['config'])
            rows = sweep(config, options['axis'], values, output_root=options['out'],
                         workers=max(1, options['workers']))
        except ExperimentError as e:
            raise CommandError(str(e), returncode=ExitCode.INVALID_INPUT)

        for row in rows:
            if row.report is not None:
                record_run(row.report, sweep_axis=row.axis, sweep_value=row.value)
            status = row.report.status if row.report else 'numeric_failure'
            line = f"{row.axis}={row.value:g}: {status}"
            if row.report is not None and row.report.exit_code == ExitCode.PASSED:
                self.stdout.write(self.style.SUCCESS(line))
            else:
                self.stdout.write(self.style.WARNING(f"{line} {row.error or row.report.message}"))

        self.stdout.write(f"{len(rows)} run(s) summarised")
