#!/usr/bin/env python3
"""
Run the BDIE solver and verification suites

Usage:
    python run_solver.py --config configs/default.json
    python run_solver.py --suite solve --suite spectrum --out results
"""

from bdie.api.cli import run

if __name__ == "__main__":
    print("=" * 60)
    print("BDIE SOLVER: mixed problem for div(a grad u) = f on the ball")
    print("=" * 60)
    print()

    raise SystemExit(run())
