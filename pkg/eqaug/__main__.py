"""Entry point of the ``eqaug`` command."""

import sys
import typing as t

from .commandtree import CommandTree


def main(argv: t.Optional[t.Sequence[str]] = None) -> int:
    """Run the client and return its exit status."""
    return CommandTree().run(argv)


if __name__ == "__main__":
    sys.exit(main())
