"""Linear MDPs over finite spaces, benchmark instances and reward adversaries."""
