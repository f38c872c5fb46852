import sys

from eiinpaint.cli import main

sys.exit(main())
