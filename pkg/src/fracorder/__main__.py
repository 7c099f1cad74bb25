import sys

from fracorder.cli import main

sys.exit(main())
