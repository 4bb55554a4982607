# This file makes a Python package
