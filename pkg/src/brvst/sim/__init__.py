"""Discrete-event simulation of the overlay over mobile nodes."""
