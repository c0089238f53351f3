# Colour shorthands
from clint.textui import colored

from .classes import NAA, SAA

cyn = colored.cyan  # file paths
ylw = colored.yellow  # warnings / inconclusive
red = colored.red  # errors / SAA
grn = colored.green  # regular msg / NAA


def verdict_color(label):
    # Colour a verdict label for the terminal.
    if label == NAA:
        return grn(label)
    if label == SAA:
        return red(label)
    return ylw(label)
