__version__ = "0.4-DEV"
__author__ = "numeraire developers"
