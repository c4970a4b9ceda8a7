import sys

from fedmoment.cli import main


sys.exit(main())
