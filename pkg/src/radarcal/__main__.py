import sys

from radarcal.cli import main

sys.exit(main())
