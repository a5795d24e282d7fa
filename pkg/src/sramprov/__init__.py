"""SRAM provenance attestation from power-up signatures."""

__version__ = "0.1.0"
