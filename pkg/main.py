from __future__ import annotations

import sys

from dotenv import load_dotenv

from capot.cli import main

if __name__ == "__main__":
    load_dotenv()
    sys.exit(main())
