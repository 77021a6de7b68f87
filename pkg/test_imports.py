import sys
print(f"Python version: {sys.version}")

try:
    import fastapi
    print("✓ FastAPI imported successfully")
except ImportError as e:
    print("✗ FastAPI import failed:", e)

try:
    import uvicorn
    print("✓ Uvicorn imported successfully")
except ImportError as e:
    print("✗ Uvicorn import failed:", e)

try:
    import numpy
    print(f"✓ NumPy {numpy.__version__} imported successfully")
except ImportError as e:
    print("✗ NumPy import failed:", e)

try:
    import scipy
    from scipy.optimize import least_squares  # noqa: F401
    from scipy import sparse  # noqa: F401
    print(f"✓ SciPy {scipy.__version__} imported successfully")
except ImportError as e:
    print("✗ SciPy import failed:", e)

try:
    from app.cli import main  # noqa: F401
    from app.main import app  # noqa: F401
    print("✓ Toolkit modules imported successfully")
except ImportError as e:
    print("✗ Toolkit import failed:", e)
