"""Sensor fleet simulation: periodic, smart and coffee-pot nodes plus a scenario runner."""
