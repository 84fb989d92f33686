"""PASS/FAIL records collected by the acceptance suite."""

import functools
import time

RESULTS: list[tuple[int, str, bool, float, float, str]] = []


def criterion(number: int, title: str, limit_s: float):
    """Time a check, enforce its runtime limit and log the outcome."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            ok, note = False, ""
            try:
                fn(*args, **kwargs)
                ok = True
            except AssertionError as exc:
                ok, note = False, str(exc).splitlines()[0] if str(exc) else "assertion failed"
                raise
            except Exception as exc:
                note = type(exc).__name__
                raise
            finally:
                dt = time.perf_counter() - t0
                if ok and dt >= limit_s:
                    ok, note = False, f"took {dt:.2f}s"
                RESULTS.append((number, title, ok, dt, limit_s, note))
            assert dt < limit_s, f"runtime {dt:.2f}s exceeds {limit_s}s"
        return run
    return wrap


def format_line(rec) -> str:
    number, title, ok, dt, limit_s, note = rec
    tail = f" ({note})" if note else ""
    return f"{'PASS' if ok else 'FAIL'} [{number}] {title}: {dt:.2f}s of {limit_s:g}s{tail}"
