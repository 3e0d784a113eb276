"""Solver core for FCFS PH/M/c queues with a deterministic patience bound."""
