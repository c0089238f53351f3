# -*- coding: utf-8 -*-
"""
Numeraire setup script for pip to install numeraire as a package.
The ~/.numeraire folder and its settings file are made on first run.
"""

import setuptools

import numeraire

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="numeraire",
    version=numeraire.__version__,
    author=numeraire.__author__,
    description="Log-optimal portfolios and asymptotic arbitrage diagnostics for sequences of markets",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(),
    install_requires=[
        "ujson<2",
        "clint",
        "halo",
        "tqdm",
        "pyfiglet",
        "tonyg-rfc3339",
        "numpy",
        "scipy",
        "pandas",
    ],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["numeraire=numeraire.numeraire:main"]},
    python_requires=">=3.6",
    classifiers=[
        "Programming Language :: Python :: 3 :: Only",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
