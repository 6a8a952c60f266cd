import sys

from pddf.main import main

if __name__ == "__main__":
    sys.exit(main())
