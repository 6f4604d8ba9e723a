"""Entrypoint module, in case you use `python -m sequential_stopping`."""

from .cli import main

if __name__ == "__main__":
    main()
