"""psmscope entry point: ``python main.py infer --trace trace.jsonl --out out``."""
import sys

from psmscope.cli import main

if __name__ == "__main__":
    sys.exit(main())
