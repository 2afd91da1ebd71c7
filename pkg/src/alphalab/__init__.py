"""Alpha factor discovery: GP expression search and IC-trained neural features."""

__version__ = "0.1.0"
