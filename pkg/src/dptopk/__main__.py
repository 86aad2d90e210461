import sys

from dptopk.cli import main

sys.exit(main())
