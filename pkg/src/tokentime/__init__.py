"""Token-time experiment harness.

Treats generated tokens as elapsed time: the BombRush gridworld charges an
agent's reasoning against a countdown, the duration-judgment task asks a
model which reply took longer to generate, and the urgency QA task measures
how answers change when the user is in a hurry.
"""
__version__ = "0.1.0"
