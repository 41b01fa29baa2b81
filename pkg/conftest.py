import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "concern.settings")
django.setup()
