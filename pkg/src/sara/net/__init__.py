"""Transport helpers shared by the server and the client SDK."""
