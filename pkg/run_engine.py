#!/usr/bin/env python3
"""
Запуск движка проектирования эвристик из командной строки
"""

import sys

from app.cli.main import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n👋 Запуск остановлен пользователем")
        sys.exit(130)
