"""Enable running as: python -m maternfem"""
from .cli import main
import sys

if __name__ == "__main__":
    sys.exit(main())
