"""Citation-aware scientific paper summarization with hierarchical graph contrastive learning."""

__version__ = "0.1.0"
