#!/usr/bin/env python3
"""
Entry point for the engagedetector command line.
Run this script with `python3 main.py <command>` from the project root.
"""
import os
import sys
# Ensure project root is in sys.path for package imports
sys.path.insert(0, os.path.dirname(__file__))
from engagedetector.main import main

if __name__ == "__main__":
    sys.exit(main())
