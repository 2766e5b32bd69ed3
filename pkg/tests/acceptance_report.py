"""Collects one result line per acceptance criterion for the terminal summary."""

LINES: dict[int, str] = {}


def record(criterion: int, passed: bool, detail: str) -> str:
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    LINES[criterion] = line
    print(line)
    return line
