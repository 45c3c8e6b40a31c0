"""Experiment runner wiring pool, balancer, autoscaler and clients together."""
