"""
cognimap entry point

Dynamic-scene mapping over per-frame priors: motion segmentation, a
persistent scene memory bank and factor-graph trajectory refinement.

Usage:
    python main.py synth scenes/room0 --seed 0
    python main.py run scenes/room0 runs/room0 --bank banks/default
    python main.py eval runs/room0 scenes/room0
"""

import sys

from cognimap.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
