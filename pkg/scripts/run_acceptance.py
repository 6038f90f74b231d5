"""Run the acceptance suite and print the PASS/FAIL line of every criterion.

Usage: python3 scripts/run_acceptance.py [-k EXPR]
"""
import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    root = Path(__file__).resolve().parents[1]
    sys.exit(pytest.main([str(root / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider", *sys.argv[1:]]))
