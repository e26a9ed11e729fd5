import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'pointflow_backend.settings')
django.setup()
