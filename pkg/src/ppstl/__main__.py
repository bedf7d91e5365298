import sys

from ppstl.cli import main

sys.exit(main())
