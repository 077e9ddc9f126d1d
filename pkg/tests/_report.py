"""Collects one PASS/FAIL line per acceptance criterion."""

LINES = []


def record(number, title, passed, detail=""):
    line = f"ACCEPTANCE {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    LINES.append(line)
    print(line)
    return passed
