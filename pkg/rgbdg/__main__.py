import sys

from rgbdg.main import main

sys.exit(main())
