"""Prioritized input-output feedback linearization toolkit."""
