"""Allow ``python -m rsdd`` as an alias for the ``rsdd`` console script."""

from .cli import main

if __name__ == "__main__":
    raise SystemExit(main())
