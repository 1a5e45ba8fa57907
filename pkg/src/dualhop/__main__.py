import sys

from dualhop.cli import main

sys.exit(main())
