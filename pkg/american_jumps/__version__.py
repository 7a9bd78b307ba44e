__version__ = "2024.11.0"
