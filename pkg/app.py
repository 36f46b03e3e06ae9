"""Entry point for the semantic map-based localization tools"""
import sys
import os

# Ensure we can find our modules
current_dir = os.path.dirname(os.path.abspath(__file__))
if current_dir not in sys.path:
    sys.path.insert(0, current_dir)

from src.cli import main

if __name__ == '__main__':
    sys.exit(main())
