# Командная строка движка
