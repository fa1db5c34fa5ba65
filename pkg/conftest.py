import os

# Tests run against a throwaway in-memory database
os.environ.setdefault("JPEGXS_UEP_DATABASE_URL", "sqlite://")
