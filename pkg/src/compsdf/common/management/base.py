import argparse
import logging
import sys
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management import BaseCommand, CommandError

from compsdf.common.exceptions import ComputationError

logger = logging.getLogger(__name__)

INVALID_INPUT = 1
RUNTIME_FAILURE = 2

HELP_FLAG_TEXT = 'Показать эту справку и выйти.'


def _usage_error(parser, message: str):
    if not parser.called_from_command_line:
        raise CommandError(f'Error: {message}', returncode=INVALID_INPUT)
    parser.print_usage(sys.stderr)
    parser.exit(INVALID_INPUT, f'{parser.prog}: error: {message}\n')


def existing_path(value: str) -> Path:
    path = Path(value)
    if not path.exists():
        raise argparse.ArgumentTypeError(f'путь не найден: {value}')
    return path


def error_messages(error: ValidationError) -> str:
    return '; '.join(str(message) for message in error.messages)


def _value_spec(action: argparse.Action) -> str:
    if action.nargs == 0:
        return ''
    if action.choices:
        metavar = '{' + ','.join(str(choice) for choice in action.choices) + '}'
    else:
        metavar = action.metavar or action.dest.upper()
    if action.nargs == '*':
        return f' [{metavar} ...]'
    if isinstance(action.nargs, int):
        return ' ' + ' '.join([metavar] * action.nargs)
    return f' {metavar}'


def format_help(parser: argparse.ArgumentParser) -> str:
    """
    Help text with one entry per flag: the flag with its value on the first line and the description
    indented on the second. Independent of the terminal width.
    """
    lines = [f'usage: {parser.prog} [options]', '']
    if parser.description:
        lines += [parser.description, '']
    lines += ['options:', '  -h, --help', f'      {HELP_FLAG_TEXT}']
    for action in parser._actions:
        if isinstance(action, argparse._HelpAction) or action.help == argparse.SUPPRESS:
            continue
        required = ' (обязательный)' if action.required else ''
        lines.append(f'  {", ".join(action.option_strings)}{_value_spec(action)}{required}')
        lines.append(f'      {action.help}')
    return '\n'.join(lines) + '\n'


class PipelineCommand(BaseCommand):
    """
    Base of the pipeline commands: common ``--seed``/``--threads`` flags and exit codes
    1 for invalid input or usage and 2 for failed computations.
    """

    requires_system_checks = []
    suppressed_base_arguments = {
        '--version',
        '--verbosity',
        '--settings',
        '--pythonpath',
        '--traceback',
        '--no-color',
        '--force-color',
    }

    def create_parser(self, prog_name, subcommand, **kwargs):
        if prog_name == 'compsdf':
            subcommand = subcommand.replace('_', '-')
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.error = lambda message: _usage_error(parser, message)
        parser.format_help = lambda: format_help(parser)
        return parser

    def add_arguments(self, parser):
        super().add_arguments(parser)

        parser.add_argument(
            '--seed',
            dest='seed',
            type=int,
            default=None,
            help='Начальное значение генератора случайных чисел (по умолчанию COMPSDF_SEED).',
        )
        parser.add_argument(
            '--threads',
            dest='threads',
            type=int,
            default=None,
            help='Максимальное число потоков (по умолчанию COMPSDF_THREADS).',
        )

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except ValidationError as e:
            logger.error(f'Некорректные входные данные: {error_messages(e)}')
            raise CommandError(error_messages(e), returncode=INVALID_INPUT) from e
        except (ComputationError, OSError) as e:
            logger.error(f'Ошибка вычислений: {e}')
            raise CommandError(str(e), returncode=RUNTIME_FAILURE) from e
