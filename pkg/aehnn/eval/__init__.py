"""Acceptance harness and record-stream invariant checks."""
