# Утилиты приложения
