"""
AdapTBF - adaptive token allocation for a simulated Lustre OST
"""
