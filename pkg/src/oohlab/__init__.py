"""Dynamic selection and pricing of out-of-home parcel delivery."""

__version__ = "0.1.0"
