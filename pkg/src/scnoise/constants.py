K_B = 1.380649e-23  # Boltzmann constant, J/K (exact SI value)
