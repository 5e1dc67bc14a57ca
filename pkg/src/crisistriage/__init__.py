"""Crisis-level triage of support-hotline calls from paralinguistically enriched transcripts."""

__version__ = "0.1.0"
