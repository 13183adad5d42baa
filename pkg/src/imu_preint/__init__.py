"""IMU preintegration on SO(3) with log-depth scans, covariance propagation and GPS fusion."""

__version__ = "0.1.0"
