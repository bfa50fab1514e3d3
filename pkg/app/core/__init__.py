# Core модули приложения
