"""Cold-start video relevance: pair-distance random forest, two-branch regression, DeepLDA."""

__version__ = "0.1.0"
