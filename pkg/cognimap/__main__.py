import sys

from cognimap.cli.main import main

sys.exit(main())
