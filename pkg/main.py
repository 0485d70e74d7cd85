"""
Director command-line entry point.

    python main.py validate scenarios/soccer.json
    python main.py run scenarios/soccer.json --snapshot-at 3,6 --out soccer.trace
"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
