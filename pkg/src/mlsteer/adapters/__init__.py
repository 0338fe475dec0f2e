"""Adapters implement the gateways of the domain and the encodings of its results."""
