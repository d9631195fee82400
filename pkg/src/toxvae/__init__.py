"""Toxicity-aware SMILES variational autoencoder toolkit."""

from pathlib import Path

__version__ = "0.1.0"

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def fixture(name: str) -> Path:
    """Path to a file shipped in the package's fixtures directory."""
    path = FIXTURES / name
    if not path.exists():
        raise FileNotFoundError(path)
    return path
