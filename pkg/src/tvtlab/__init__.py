"""Desk-scale lab for long-horizon credit assignment with episodic memory.

A from-scratch stack: a small reverse-mode autodiff engine, a
memory-augmented recurrent agent with reconstruction objectives and two
ablated baselines, temporal value transport for crediting distant past
actions, a suite of multi-phase gridworld tasks, and the analyses
(gradient SNR, return variance, value saliency, occupancy) used to
characterize them.
"""

__version__ = "0.1.0"
