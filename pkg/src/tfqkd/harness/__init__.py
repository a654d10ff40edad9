"""Configuration, table ingestion, orchestration and the command line."""
