"""
``compsdf`` console entry point: the pipeline management commands under one program name.
"""
import os
import sys

COMMANDS = {
    'bake': 'bake',
    'train': 'train',
    'render': 'render',
    'mesh': 'mesh',
    'eval': 'eval',
    'compare-opacity': 'compare_opacity',
}

USAGE = (
    'usage: compsdf {bake,train,render,mesh,eval,compare-opacity} [options]\n'
    '       compsdf <command> --help\n'
)


def main(argv: list[str] | None = None) -> int:
    """
    :param argv: Arguments without the program name, ``sys.argv[1:]`` by default.
    :return: Exit code: 0 on success, 1 on invalid input or usage, 2 on a failed computation.
    """
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'compsdf.settings')
    from django.core.management import execute_from_command_line

    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ('-h', '--help'):
        sys.stderr.write(USAGE)
        return 0 if argv else 1
    if argv[0] not in COMMANDS:
        sys.stderr.write(f'compsdf: неизвестная команда {argv[0]!r}\n{USAGE}')
        return 1
    try:
        execute_from_command_line(['compsdf', COMMANDS[argv[0]], *argv[1:]])
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
