"""
Módulo principal para ejecutar la CLI de numamap.

Ejemplo:
    python main.py validate-topology --topology reference-numascale.topo
"""

import sys

from src.presentation.cli.commands import main


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
