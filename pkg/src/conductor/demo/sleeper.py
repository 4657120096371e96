"""Demo worker that idles until terminated (exit code from $SLEEPER_EXIT if it
ever wakes via $SLEEPER_SECONDS)."""

from __future__ import annotations

import os
import sys
import time


def main() -> None:
    seconds = float(os.environ.get("SLEEPER_SECONDS", "86400"))
    time.sleep(seconds)
    sys.exit(int(os.environ.get("SLEEPER_EXIT", "0")))


if __name__ == "__main__":
    main()
