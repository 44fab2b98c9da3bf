#!env python
"""
Entry point for running the command line tool from a source checkout.

All arguments are passed to `chevah.cylinder_wiener.cli`.
"""
from chevah.cylinder_wiener.cli import run


if __name__ == '__main__':
    run()
