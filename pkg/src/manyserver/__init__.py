"""Many-server FCFS queues: exact simulation and measure-valued fluid limits."""

__version__ = "0.1.0"
