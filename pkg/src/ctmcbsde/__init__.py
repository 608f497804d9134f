"""Markov-chain approximation of BSDEs with exponential integrators."""
