import sys

from bearingform.cli import main

sys.exit(main())
