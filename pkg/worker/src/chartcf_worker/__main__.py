from .worker import serve

serve()
