"""Entry point for ``python -m vsgm`` and the ``vsgm`` console script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
