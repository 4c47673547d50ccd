"""Cross-lingual argument mining: Microtext graphs, Persuasive-Essays projection,
scenario datasets, a two-head classifier and its evaluation."""

__version__ = "0.1.0"
