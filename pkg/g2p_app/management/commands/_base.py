"""Shared plumbing for the rg2p management commands."""
import logging

from django.core.management.base import BaseCommand, CommandError

from g2p_app.exceptions import G2PError

logger = logging.getLogger('g2p_app.commands')

INPUT_ERROR = 2
RUNTIME_ERROR = 3


class TaskFailure(G2PError):
    """A Celery task reported an error status; carries the exit code it recorded."""

    def __init__(self, message, exit_code):
        super().__init__(message)
        self.exit_code = exit_code


class G2PCommand(BaseCommand):
    """Runs ``run()`` and turns pipeline errors into exit codes 2 (input) and 3 (runtime)."""

    banner = ''

    def handle(self, *args, **options):
        if self.banner:
            self.stdout.write(self.style.SUCCESS(self.banner))
            self.stdout.write('=' * 50)
        try:
            return self.run(*args, **options)
        except G2PError as e:
            logger.error(f"{type(e).__name__}: {str(e)}")
            raise CommandError(f'{type(e).__name__}: {e}', returncode=e.exit_code) from e
        except FileNotFoundError as e:
            raise CommandError(f'file not found: {e.filename}', returncode=INPUT_ERROR) from e
        except OSError as e:
            raise CommandError(f'I/O error: {e}', returncode=INPUT_ERROR) from e

    def run(self, *args, **options):
        raise NotImplementedError

    def ok(self, message):
        self.stdout.write(self.style.SUCCESS(f'✅ {message}'))

    def warn(self, message):
        self.stdout.write(self.style.WARNING(f'⚠️  {message}'))
