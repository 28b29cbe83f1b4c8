import json
import logging

from django.core.management.base import BaseCommand, CommandError

from lab.services.experiment import ExitCode, ExperimentError, load_config, record_run, run

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run the shock-strip pipeline for one experiment config'

    def add_arguments(self, parser):
        parser.add_argument('config', help='Path to a key = value experiment config')
        parser.add_argument('--out', dest='out', default=None, help='Output directory for CSVs and the report')
        parser.add_argument('--dry-run', action='store_true', help='Validate and echo the config without computing')
        parser.add_argument('--no-progress', action='store_true', help='Hide the time-stepping progress bar')

    def handle(self, *args, **options):
        try:
            config = load_config(options['config'])
        except ExperimentError as e:
            raise CommandError(str(e), returncode=ExitCode.INVALID_INPUT)

        if options['dry_run']:
            self.stdout.write(json.dumps(config.as_dict(), indent=2, sort_keys=True))
            report = run(config, output_dir=options['out'], dry_run=True)
            record_run(report)
            self.stdout.write(self.style.SUCCESS('Config is valid (dry run)'))
            return

        self.stdout.write(f"Running '{config.name}'...")
        report = run(config, output_dir=options['out'], progress=not options['no_progress'])
        record_run(report)

        self.stdout.write(f"Outputs in {report.output_dir}")
        if report.exit_code == ExitCode.PASSED:
            self.stdout.write(self.style.SUCCESS(
                f"All verdicts passed: y0={report.y0:.10g}, T*={report.t_star:g}"
            ))
            return
        raise CommandError(f"{report.status}: {report.message}", returncode=report.exit_code)
