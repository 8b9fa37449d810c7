"""The authoritative server: listeners, registry, and per-session pipeline."""
