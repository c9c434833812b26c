"""
Setup script for the adversarial debiasing experiments
"""

import os
import shutil
import subprocess
import sys
from pathlib import Path


def create_env_file():
    """Create .env file from template if it doesn't exist"""
    env_file = Path(".env")
    env_example = Path(".env.example")

    if not env_file.exists() and env_example.exists():
        shutil.copy(env_example, env_file)
        print("✅ Created .env file from template")
        print("📝 Edit .env to change worker counts or the output directory")
        return True
    elif not env_file.exists():
        print("⚠️ No .env file found; built-in defaults will be used.")
        return True
    else:
        print("ℹ️ .env file already exists")
        return True


def install_dependencies():
    """Install required dependencies"""
    try:
        print("📦 Installing dependencies...")
        subprocess.check_call([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"])
        print("✅ Dependencies installed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Error installing dependencies: {e}")
        return False


def create_directories():
    """Create the default output directory layout"""
    output_dir = Path(os.getenv("DEBIAS_OUTPUT_DIR", "runs"))
    for sub in ("checkpoints", "probes", "reports", "cells"):
        (output_dir / sub).mkdir(parents=True, exist_ok=True)
    print(f"✅ Output directories created under {output_dir}")


def main():
    """Main setup function"""
    print("🚀 Setting up the debiasing experiments...")
    print("=" * 50)

    if not install_dependencies():
        print("❌ Setup failed during dependency installation")
        return False

    create_env_file()
    create_directories()

    print("\n" + "=" * 50)
    print("✅ Setup completed successfully!")
    print("\n📋 Next steps:")
    print("1. Run the tests: pytest")
    print("2. Run the desk grid: python run.py grid --preset desk")
    print("3. Aggregate it: python run.py report --out runs")
    return True


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
