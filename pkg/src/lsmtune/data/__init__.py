"""Bundled data files: the option catalog and the default options fixture."""
