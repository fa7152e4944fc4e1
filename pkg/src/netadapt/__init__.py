"""netadapt: frozen-backbone adaptation framework for networking tasks."""

__version__ = "0.1.0"
