"""Shared pass/fail log for the acceptance criteria (read by conftest)."""

RESULTS: list[tuple[int, str, bool, float, str]] = []
