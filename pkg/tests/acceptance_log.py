"""Collects one pass/fail line per acceptance criterion for the terminal summary."""
import functools
import time

LINES: dict[int, str] = {}


def criterion(number: int, title: str):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
            except AssertionError as exc:
                first = str(exc).strip().splitlines()[0] if str(exc).strip() else "assertion failed"
                LINES[number] = f"criterion {number:2d} FAIL  {title}: {first}"
                raise
            took = time.perf_counter() - start
            LINES[number] = f"criterion {number:2d} PASS  {title} ({detail}; {took:.1f} s)"
        return run
    return wrap
